import numpy as np
import pytest

from moso import (ArgumentError, ConfigurationError, Coreset, Dataset, GuardError, ModelSpec, ParseError,
                  PruneConfig, Pruner, SamplingRule, ScoreTable, TrainConfig, evaluate_coreset, fit, generate_blobs,
                  make_partition, materialize, moso_approx, prune, read_coreset, score_pipeline, split, write_coreset)
from moso.pipeline import PIPELINE_METHODS, prune_count
from moso.scoring import format_scores


@pytest.fixture
def four():
    return Dataset([[0.0], [1.0], [2.0], [3.0]], [0, 1, 0, 1], num_classes=2)


def _scores(values):
    return ScoreTable.from_array('moso_approx', values)


def test_prune_keeps_highest_scores(four):
    assert prune(four, _scores([0.1, 0.5, 0.3, 0.9]), 0.5).kept_ids == (1, 3)
    assert prune(four, _scores([0.1, 0.5, 0.3, 0.9]), 0.0).kept_ids == (0, 1, 2, 3)


def test_prune_ties_remove_lower_ids_first(four):
    assert prune(four, _scores([0.2, 0.2, 0.2, 0.2]), 0.5).kept_ids == (2, 3)


def test_prune_ratio_bounds(four):
    with pytest.raises(GuardError, match='delta must be < 1'):
        prune(four, _scores([0.1, 0.2, 0.3, 0.4]), 1.0)
    with pytest.raises(ArgumentError):
        prune(four, _scores([0.1, 0.2, 0.3, 0.4]), -0.1)
    with pytest.raises(ArgumentError):
        prune(four, _scores([0.1, 0.2, 0.3]), 0.5)
    with pytest.raises(GuardError):
        PruneConfig(1.5)


@pytest.mark.parametrize('n, delta, removed', [(100, 0.29, 29), (10, 0.25, 2), (7, 0.0, 0), (3, 0.99, 2),
                                               (10, 0.3 - 1e-12, 2), (10, 0.3, 3), (1000, 0.001, 1)])
def test_prune_count(n, delta, removed):
    assert prune_count(n, delta) == removed


def test_prune_never_exceeds_the_ratio(four):
    for delta in (0.25 - 1e-12, 0.5 - 1e-12, 0.75 - 1e-12):
        kept = prune(four, _scores([0.1, 0.2, 0.3, 0.4]), delta).kept_ids
        assert 4 - len(kept) <= delta * 4


def test_prune_config(four):
    scores = _scores([0.1, 0.5, 0.3, 0.9])
    assert prune(four, scores, PruneConfig(0.5, 'moso_approx')).kept_ids == (1, 3)
    with pytest.raises(ArgumentError, match='expected grand scores'):
        prune(four, scores, PruneConfig(0.5, 'grand'))
    with pytest.raises(ArgumentError, match='keep policy'):
        PruneConfig(0.5, keep_policy='lowest')


def test_coresets_shrink_monotonically(tiny):
    scores = ScoreTable.from_array('random', np.random.default_rng(0).normal(size=tiny.N))
    previous = set(range(tiny.N))
    for delta in (0.1, 0.3, 0.5, 0.7, 0.9):
        kept = set(prune(tiny, scores, delta).kept_ids)
        assert len(kept) == tiny.N - int(np.floor(delta * tiny.N))
        assert kept <= previous
        previous = kept


def test_materialize(tiny):
    coreset = prune(tiny, ScoreTable.from_array('random', np.arange(tiny.N, dtype=float)), 0.25)
    kept = materialize(tiny, coreset)
    assert kept.N == 24
    np.testing.assert_array_equal(kept.source_ids, np.arange(8, 32))
    np.testing.assert_array_equal(kept.features, tiny.features[8:])
    with pytest.raises(ArgumentError):
        materialize(tiny.take(range(31)), coreset)


@pytest.mark.parametrize('I', [1, 2, 3, 7])
def test_partition_is_stratified(blobs, I):
    plan = make_partition(blobs, I, seed=4)
    subsets = plan.subsets()
    assert sorted(np.concatenate(subsets).tolist()) == list(range(blobs.N))
    for c in range(blobs.K):
        counts = [int(np.sum(blobs.labels[ids] == c)) for ids in subsets]
        assert max(counts) - min(counts) <= 1
    np.testing.assert_array_equal(plan.assignment, make_partition(blobs, I, seed=4).assignment)


def test_partition_bounds(tiny):
    with pytest.raises(ArgumentError):
        make_partition(tiny, 0, seed=0)
    with pytest.raises(ArgumentError):
        make_partition(tiny, tiny.N + 1, seed=0)


def test_single_partition_matches_direct_scoring(tiny, logistic):
    cfg = TrainConfig(epochs=4, batch_size=8, shuffle_seed=12)
    rule = SamplingRule.uniform_k(5, seed=2)
    piped = score_pipeline(tiny, logistic, cfg, make_partition(tiny, 1, seed=0), rule)
    direct = moso_approx(tiny, fit(tiny, logistic, cfg).trace, rule)
    assert format_scores(piped) == format_scores(direct)


def test_partitioned_scores_cover_every_sample(blobs):
    spec = ModelSpec('logistic', d=2, K=2, init_seed=3)
    cfg = TrainConfig(epochs=3, batch_size=16, shuffle_seed=1)
    plan = make_partition(blobs, 4, seed=9)
    table = score_pipeline(blobs, spec, cfg, plan, SamplingRule.all_steps())
    assert table.covers(blobs)
    assert table.config_digest.endswith(';partitions=4')
    assert table.equals(score_pipeline(blobs, spec, cfg, plan, SamplingRule.all_steps(), n_jobs=2))


def test_partitioned_coreset_trains_as_well_as_unpartitioned():
    train, test = split(generate_blobs(2, 125, 2, 0.5, seed=42), 0.8, seed=0)
    spec = ModelSpec('logistic', d=2, K=2, init_seed=1)
    cfg = TrainConfig(epochs=30, batch_size=32, shuffle_seed=5)
    rule = SamplingRule.uniform_k(10, seed=3)
    accuracy = {}
    for I in (1, 2):
        scores = score_pipeline(train, spec, cfg, make_partition(train, I, seed=7), rule)
        coreset = prune(train, scores, 0.3)
        accuracy[I] = evaluate_coreset(train, coreset, test, spec, cfg, repeats=3).mean_accuracy
    assert train.N == 200
    assert abs(accuracy[1] - accuracy[2]) <= 0.03


def test_subsets_need_two_samples(tiny, logistic, cfg):
    with pytest.raises(ConfigurationError):
        score_pipeline(tiny, logistic, cfg, make_partition(tiny, tiny.N, seed=0))


@pytest.mark.parametrize('method', PIPELINE_METHODS)
def test_every_pipeline_method_scores_the_whole_set(tiny, logistic, method):
    cfg = TrainConfig(epochs=3, batch_size=8, shuffle_seed=2)
    table = score_pipeline(tiny, logistic, cfg, make_partition(tiny, 2, seed=1), method=method, seed=6)
    assert table.method == method
    assert table.covers(tiny)


def test_unknown_pipeline_method(tiny, logistic, cfg):
    with pytest.raises(ArgumentError):
        score_pipeline(tiny, logistic, cfg, make_partition(tiny, 1, seed=0), method='moso_exact')


def test_pruner_chain(tiny, logistic):
    cfg = TrainConfig(epochs=3, batch_size=8, shuffle_seed=2)
    pruner = Pruner(tiny).surrogate(logistic, cfg).score('moso_approx').prune(0.5)
    assert len(pruner.coreset) == 16
    assert pruner.coreset.method == 'moso_approx'
    assert pruner.materialize().N == 16
    with pytest.raises(ArgumentError):
        Pruner(tiny).prune(0.5)


def test_coreset_file_round_trip(tmp_path, tiny):
    coreset = prune(tiny, ScoreTable.from_array('random', np.linspace(0, 1, tiny.N)), 0.3)
    write_coreset(coreset, tmp_path / 'kept.coreset', manifest={'delta': 0.3})
    assert read_coreset(tmp_path / 'kept.coreset') == coreset


@pytest.mark.parametrize('body, line', [
    ('#moso-coreset v1 delta=0.5 method=random source=abc\n1\n1\n', 3),
    ('#moso-coreset v1 delta=0.5 method=random source=abc\n1\nx\n', 3),
    ('#moso-coreset v1 delta=0.5 method=random\n', 1),
    ('', 1),
])
def test_malformed_coreset_files(tmp_path, body, line):
    path = tmp_path / 'bad.coreset'
    path.write_text(body)
    with pytest.raises(ParseError) as info:
        read_coreset(path)
    assert info.value.line == line


def test_empty_coreset_type():
    assert len(Coreset((), 'abc', 0.5, 'random')) == 0
