"""Coreset evaluation: retrain-on-coreset accuracy, rank agreement, noise detection, reports."""

import io
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from .data import Dataset
from .errors import ArgumentError, ParseError
from .formats import (PathLike, content_lines, format_float, header_line, manifest_line,
                      parse_header, read_lines, write_lines)
from .model import ModelSpec, predict
from .pipeline import Coreset, materialize, prune_count
from .scoring import ScoreTable
from .seeds import derive_seed
from .trainer import CaptureRule, TrainConfig, fit

logger = logging.getLogger(__name__)

NULL = "null"


@dataclass(frozen=True)
class NoiseDetectReport:
    """How many mislabeled samples sit among the lowest scores.

    ``recall`` is None (and ``applicable`` false) when the dataset has no
    noisy samples.
    """
    noise_rate: float
    bottom_fraction: float
    examined: int
    recall: Optional[float]
    random_recall: float
    applicable: bool = True


@dataclass(frozen=True)
class PruneReport:
    """Test accuracy of models retrained on a coreset.

    Args:
        method: Score method that selected the coreset.
        delta: Pruning ratio.
        coreset_size: Number of kept samples.
        accuracies: Test accuracy of each repeat.
        per_class_accuracy: Mean over repeats of each class's test accuracy.
        init_seeds: Initialization seed of each repeat.
        shuffle_seeds: Shuffle seed of each repeat.
        runtime: Seconds spent per phase.
        noise: Optional noise-detection result for the scores behind the coreset.
    """
    method: str
    delta: float
    coreset_size: int
    accuracies: Tuple[float, ...]
    per_class_accuracy: Tuple[float, ...]
    init_seeds: Tuple[int, ...] = ()
    shuffle_seeds: Tuple[int, ...] = ()
    runtime: Dict[str, float] = field(default_factory=dict, compare=False)
    noise: Optional[NoiseDetectReport] = None

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.accuracies))


def _repeat_accuracy(train: Dataset, test: Dataset, spec: ModelSpec, cfg: TrainConfig) -> Tuple[float, np.ndarray]:
    params = fit(train, spec, cfg, capture=CaptureRule.nothing(), track_history=False).final_params
    correct = predict(params, test.features) == test.labels
    per_class = np.array([correct[test.labels == c].mean() if np.any(test.labels == c) else np.nan
                          for c in range(test.K)])
    return float(correct.mean()), per_class


def evaluate_training_set(train: Dataset, test: Dataset, spec: ModelSpec, cfg: TrainConfig,
                          repeats: int = 1, method: str = "random", delta: float = 0.0,
                          n_jobs: int = 1) -> PruneReport:
    """Retrain ``repeats`` times on ``train`` and measure top-1 accuracy on ``test``.

    Repeat ``r`` uses seeds derived from the spec's init seed and the
    config's shuffle seed with the label ``("repeat", r)``.
    """
    if repeats < 1:
        raise ArgumentError(f"repeats must be at least 1, got {repeats}")
    if train.N == 0:
        raise ArgumentError("empty coreset")
    init_seeds = tuple(derive_seed(spec.init_seed, "repeat", r) for r in range(repeats))
    shuffle_seeds = tuple(derive_seed(cfg.shuffle_seed, "repeat", r) for r in range(repeats))
    started = time.perf_counter()
    outcomes = Parallel(n_jobs=n_jobs)(
        delayed(_repeat_accuracy)(
            train, test,
            ModelSpec(spec.kind, spec.d, spec.K, spec.hidden, init_seed, spec.init_scale),
            TrainConfig(cfg.epochs, cfg.batch_size, cfg.schedule, shuffle_seed))
        for init_seed, shuffle_seed in zip(init_seeds, shuffle_seeds))
    elapsed = time.perf_counter() - started
    accuracies = tuple(acc for acc, _ in outcomes)
    per_class = np.nanmean(np.stack([pc for _, pc in outcomes]), axis=0) if test.N else np.full(test.K, np.nan)
    report = PruneReport(method, float(delta), train.N, accuracies, tuple(float(v) for v in per_class),
                         init_seeds, shuffle_seeds, {"train_evaluate": elapsed})
    logger.info("%s delta=%g: mean accuracy %.4f over %d repeats", method, delta, report.mean_accuracy, repeats)
    return report


def evaluate_coreset(train: Dataset, coreset: Coreset, test: Dataset, spec: ModelSpec, cfg: TrainConfig,
                     repeats: int = 1, n_jobs: int = 1) -> PruneReport:
    """Retrain on the materialized coreset with the full-set settings and test it."""
    if len(coreset) == 0:
        raise ArgumentError("empty coreset")
    started = time.perf_counter()
    kept = materialize(train, coreset)
    selected = time.perf_counter() - started
    report = evaluate_training_set(kept, test, spec, cfg, repeats, coreset.method, coreset.delta, n_jobs)
    report.runtime["materialize"] = selected
    return report


def spearman(a: ScoreTable, b: ScoreTable) -> float:
    """Spearman rank correlation of two score tables over the same ids (average ranks for ties).

    Raises:
        ArgumentError: the ids differ, fewer than two samples, or either table
            is constant.
    """
    if not np.array_equal(a.ids, b.ids):
        raise ArgumentError("score tables cover different ids")
    if len(a) < 2:
        raise ArgumentError("rank correlation needs at least 2 samples")
    if a.is_constant() or b.is_constant():
        raise ArgumentError("rank correlation is undefined for a constant score table")
    return float(stats.spearmanr(a.values, b.values)[0])


def class_consistency(full: PruneReport, pruned: PruneReport) -> Tuple[float, float]:
    """Spearman correlation (and p-value) of per-class accuracy before and after pruning."""
    before = np.asarray(full.per_class_accuracy)
    after = np.asarray(pruned.per_class_accuracy)
    if before.shape != after.shape:
        raise ArgumentError("reports cover different class counts")
    keep = ~(np.isnan(before) | np.isnan(after))
    rho, p = stats.spearmanr(before[keep], after[keep])
    return float(rho), float(p)


def noise_detection(scores: ScoreTable, ds: Dataset, bottom_fraction: float) -> NoiseDetectReport:
    """Recall of noisy samples among the ``floor(bottom_fraction * N)`` lowest scores."""
    if not 0.0 < bottom_fraction <= 1.0:
        raise ArgumentError(f"bottom_fraction must be in (0, 1], got {bottom_fraction}")
    if not scores.covers(ds):
        raise ArgumentError("score table ids do not match the dataset")
    examined = prune_count(ds.N, bottom_fraction)
    total = int(ds.noisy.sum())
    noise_rate = total / ds.N
    if total == 0:
        return NoiseDetectReport(noise_rate, bottom_fraction, examined, None, bottom_fraction, applicable=False)
    bottom = scores.ascending_order()[:examined]
    recall = float(ds.noisy[bottom].sum()) / total
    return NoiseDetectReport(noise_rate, bottom_fraction, examined, recall, bottom_fraction)


def _join(values) -> str:
    return ",".join(NULL if v is None or (isinstance(v, float) and np.isnan(v)) else
                    (format_float(v) if isinstance(v, float) else str(v)) for v in values)


def format_report(report: PruneReport, manifest: Optional[dict] = None, include_timing: bool = False):
    lines = [header_line("report"), manifest_line(manifest),
             f"method={report.method}",
             f"delta={format_float(report.delta)}",
             f"coreset_size={report.coreset_size}",
             f"mean_accuracy={format_float(report.mean_accuracy)}",
             f"std_accuracy={format_float(report.std_accuracy)}",
             f"accuracies={_join(report.accuracies)}",
             f"per_class_accuracy={_join(report.per_class_accuracy)}",
             f"init_seeds={_join(report.init_seeds)}",
             f"shuffle_seeds={_join(report.shuffle_seeds)}"]
    if report.noise is not None:
        noise = report.noise
        lines += [f"noise_rate={format_float(noise.noise_rate)}",
                  f"noise_bottom_fraction={format_float(noise.bottom_fraction)}",
                  f"noise_examined={noise.examined}",
                  f"noise_recall={NULL if noise.recall is None else format_float(noise.recall)}",
                  f"noise_random_recall={format_float(noise.random_recall)}",
                  f"noise_applicable={int(noise.applicable)}"]
    if include_timing:
        lines += [f"runtime_{phase}={format_float(seconds)}" for phase, seconds in sorted(report.runtime.items())]
    return [line for line in lines if line is not None]


def emit_report(report: PruneReport, path: PathLike, manifest: Optional[dict] = None,
                include_timing: bool = False) -> None:
    """Write ``report`` as ``key=value`` lines under a ``#moso-report v1`` header."""
    write_lines(path, format_report(report, manifest, include_timing))


def _floats(text: str) -> Tuple[float, ...]:
    if not text:
        return ()
    return tuple(np.nan if cell == NULL else float(cell) for cell in text.split(","))


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(cell) for cell in text.split(",")) if text else ()


def read_report(path: PathLike) -> PruneReport:
    where = str(path)
    lines = read_lines(path)
    parse_header(lines[0] if lines else None, "report", (), path=where)
    fields = {}
    for lineno, line in content_lines(lines):
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {line!r}", line=lineno, path=where)
        fields[key] = value
    try:
        noise = None
        if "noise_rate" in fields:
            recall = fields["noise_recall"]
            noise = NoiseDetectReport(float(fields["noise_rate"]), float(fields["noise_bottom_fraction"]),
                                      int(fields["noise_examined"]), None if recall == NULL else float(recall),
                                      float(fields["noise_random_recall"]), bool(int(fields["noise_applicable"])))
        runtime = {key[len("runtime_"):]: float(value) for key, value in fields.items() if key.startswith("runtime_")}
        return PruneReport(fields["method"], float(fields["delta"]), int(fields["coreset_size"]),
                           _floats(fields["accuracies"]), _floats(fields["per_class_accuracy"]),
                           _ints(fields["init_seeds"]), _ints(fields["shuffle_seeds"]), runtime, noise)
    except KeyError as exc:
        raise ParseError(f"report lacks {exc.args[0]}", path=where)
    except ValueError as exc:
        raise ParseError(f"bad report value ({exc})", path=where)


def plot_frame(cells: Mapping[Tuple[str, float], Optional[PruneReport]], seed: int = 0) -> pd.DataFrame:
    """One ``method, delta, seed, accuracy`` row per grid cell; failed cells get a null accuracy."""
    rows = [{"method": method, "delta": float(delta), "seed": int(seed),
             "accuracy": np.nan if report is None else report.mean_accuracy}
            for (method, delta), report in sorted(cells.items())]
    return pd.DataFrame(rows, columns=["method", "delta", "seed", "accuracy"])


def emit_plot_data(cells: Mapping[Tuple[str, float], Optional[PruneReport]], path: PathLike,
                   seed: int = 0, manifest: Optional[dict] = None) -> pd.DataFrame:
    """Write the accuracy-versus-delta grid as CSV (``method,delta,seed,accuracy``)."""
    frame = plot_frame(cells, seed)
    body = frame.to_csv(index=False, na_rep=NULL, float_format=None, lineterminator="\n")
    write_lines(path, [manifest_line(manifest), body.rstrip("\n")])
    return frame


def read_plot_data(path: PathLike) -> pd.DataFrame:
    lines = [line for line in read_lines(path) if not line.startswith("##")]
    return pd.read_csv(io.StringIO("\n".join(lines)), na_values=[NULL], keep_default_na=False)


@pd.api.extensions.register_dataframe_accessor("moso")
class PlotGridAccessor:
    """Accessor for plot-grid frames produced by :func:`plot_frame`."""

    def __init__(self, pandas_obj):
        missing = {"method", "delta", "accuracy"} - set(pandas_obj.columns)
        if missing:
            raise AttributeError(f"not a plot grid, missing columns {sorted(missing)}")
        self._obj = pandas_obj

    def accuracy_grid(self) -> pd.DataFrame:
        """Delta-by-method table of accuracies."""
        return self._obj.pivot_table(index="delta", columns="method", values="accuracy", dropna=False)

    def best_method(self) -> pd.Series:
        """Highest-accuracy method at each delta."""
        return self.accuracy_grid().idxmax(axis=1)
