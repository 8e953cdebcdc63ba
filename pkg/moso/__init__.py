"""
moso: data pruning by Moving-one-Sample-out scores.

Train a small surrogate with SGD, score every training sample by how much its
removal would change the loss of the rest, and prune the lowest scores.
"""

from .data import Dataset, NoiseConfig, Sample, generate_blobs, inject_label_noise, read_dataset, split, write_dataset
from .errors import ArgumentError, ConfigurationError, GuardError, MosoError, ParseError
from .evaluation import (NoiseDetectReport, PruneReport, class_consistency, emit_plot_data, emit_report,
                         evaluate_coreset, noise_detection, read_plot_data, read_report, spearman)
from .model import (ModelParams, ModelSpec, forward, grad_mean, grad_sample, init_params, loss, mean_loss,
                    read_params, write_params)
from .pipeline import (Coreset, PartitionPlan, PruneConfig, Pruner, make_partition, materialize, prune,
                       read_coreset, score_pipeline, write_coreset)
from .scoring import (SamplingRule, ScoreTable, approximation_error_probe, el2n_score, grand_score,
                      loo_mean_gradient, moso_approx, moso_exact, random_score, read_scores,
                      sampling_variance, write_scores)
from .trainer import (CaptureRule, CheckpointTrace, FitResult, Schedule, TrainConfig, fit, forgetting_counts,
                      read_trace, retrain_without, write_trace)

__version__ = '0.1.0'
__all__ = [
    'Dataset', 'Sample', 'NoiseConfig', 'generate_blobs', 'inject_label_noise', 'split',
    'read_dataset', 'write_dataset',
    'ModelSpec', 'ModelParams', 'init_params', 'forward', 'loss', 'mean_loss', 'grad_sample', 'grad_mean',
    'read_params', 'write_params',
    'Schedule', 'TrainConfig', 'CaptureRule', 'CheckpointTrace', 'FitResult', 'fit', 'retrain_without',
    'forgetting_counts', 'read_trace', 'write_trace',
    'ScoreTable', 'SamplingRule', 'loo_mean_gradient', 'moso_approx', 'moso_exact', 'grand_score',
    'el2n_score', 'random_score', 'approximation_error_probe', 'sampling_variance',
    'read_scores', 'write_scores',
    'PartitionPlan', 'PruneConfig', 'Coreset', 'Pruner', 'make_partition', 'score_pipeline', 'prune',
    'materialize', 'read_coreset', 'write_coreset',
    'PruneReport', 'NoiseDetectReport', 'evaluate_coreset', 'spearman', 'class_consistency',
    'noise_detection', 'emit_report', 'read_report', 'emit_plot_data', 'read_plot_data',
    'MosoError', 'ArgumentError', 'ConfigurationError', 'GuardError', 'ParseError',
]
