"""End-to-end checks on small synthetic instances."""

import numpy as np
import pytest

from moso import (ModelSpec, NoiseConfig, SamplingRule, Schedule, TrainConfig, evaluate_coreset, fit,
                  generate_blobs, grad_mean, inject_label_noise, init_params, loo_mean_gradient, moso_approx,
                  moso_exact, noise_detection, prune, random_score, spearman, split)
from moso.model import per_sample_grads
from moso.seeds import component_seeds

SEEDS = range(5)


def test_exact_and_approximate_scores_agree(tiny, logistic):
    cfg = TrainConfig(epochs=30, batch_size=32, schedule=Schedule('constant', eta=0.5), shuffle_seed=0)
    result = fit(tiny, logistic, cfg)
    exact = moso_exact(tiny, logistic, cfg, result)
    approx = moso_approx(tiny, result.trace, SamplingRule.all_steps())
    assert spearman(exact, approx) > 0.5


@pytest.mark.parametrize('kind', ['logistic', 'mlp'])
def test_leave_one_out_identity_for_every_sample(kind):
    ds = generate_blobs(2, 25, 3, 1.0, seed=6)
    spec = ModelSpec(kind, d=3, K=2, hidden=4, init_seed=1, init_scale=0.5)
    params = init_params(spec)
    full = grad_mean(params, ds)
    G = per_sample_grads(params, ds.features, ds.labels)
    for z in range(ds.N):
        rest = np.delete(np.arange(ds.N), z)
        np.testing.assert_allclose(loo_mean_gradient(full, G[z], ds.N), grad_mean(params, ds, rest),
                                   rtol=0, atol=1e-12)


def _noisy_run(seed):
    """200 training samples from two centred blobs, 20% of them redrawn."""
    seeds = component_seeds(seed)
    ds = generate_blobs(2, 125, 2, 1.0, seeds['blobs'])
    train, test = split(ds, 0.8, seeds['split'])
    train = inject_label_noise(train, NoiseConfig(0.2, seeds['noise']))
    spec = ModelSpec('logistic', d=2, K=2, init_seed=seeds['init'])
    cfg = TrainConfig(epochs=30, batch_size=32, schedule=Schedule('constant', eta=0.5), shuffle_seed=seeds['shuffle'])
    scores = moso_approx(train, fit(train, spec, cfg).trace, SamplingRule.uniform_k(10, seeds['sampling']))
    return train, test, spec, cfg, scores


def test_mislabeled_samples_score_lowest():
    recalls = []
    for seed in SEEDS:
        train, _, _, _, scores = _noisy_run(seed)
        assert train.N == 200
        recalls.append(noise_detection(scores, train, bottom_fraction=0.2).recall)
    assert np.mean(recalls) >= 0.4


def test_pruning_noisy_data_beats_random_selection():
    moso_accuracy, random_accuracy = [], []
    for seed in SEEDS:
        train, test, spec, cfg, scores = _noisy_run(seed)
        kept = prune(train, scores, 0.3)
        moso_accuracy.append(evaluate_coreset(train, kept, test, spec, cfg).mean_accuracy)
        baseline = prune(train, random_score(train, component_seeds(seed)['random']), 0.3)
        random_accuracy.append(evaluate_coreset(train, baseline, test, spec, cfg).mean_accuracy)
    assert np.mean(moso_accuracy) >= np.mean(random_accuracy)
