import numpy as np
import pytest

from moso import ArgumentError, Dataset, NoiseConfig, ParseError, generate_blobs, inject_label_noise, split
from moso.data import format_dataset, read_dataset, write_dataset


def test_generate_blobs_smallest():
    ds = generate_blobs(num_classes=2, per_class=1, dim=2, spread=0.1, seed=7)
    assert ds.N == 2
    assert set(ds.labels.tolist()) == {0, 1}
    assert ds.ids.tolist() == [0, 1]


def test_generate_blobs_is_deterministic():
    first = generate_blobs(3, 10, 5, 0.5, seed=1)
    second = generate_blobs(3, 10, 5, 0.5, seed=1)
    assert format_dataset(first) == format_dataset(second)
    assert np.bincount(first.labels).tolist() == [10, 10, 10]


def test_generate_blobs_centres_the_class_means():
    ds = generate_blobs(3, 2000, 2, 0.5, seed=1)
    means = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in range(3)])
    np.testing.assert_allclose(ds.features.mean(axis=0), 0.0, atol=0.05)
    gaps = np.linalg.norm(means[:, None] - means[None], axis=-1)
    assert gaps[np.triu_indices(3, k=1)].min() == pytest.approx(4.0, abs=0.1)


@pytest.mark.parametrize('args', [(1, 5, 2), (2, 0, 2), (2, 5, 0)])
def test_generate_blobs_rejects_bad_sizes(args):
    with pytest.raises(ArgumentError):
        generate_blobs(*args, spread=1.0, seed=0)


def test_zero_noise_is_identity(blobs):
    noisy = inject_label_noise(blobs, NoiseConfig(rate=0.0, seed=3))
    assert noisy == blobs
    assert not noisy.noisy.any()


def test_noise_redraws_exact_count():
    # With a million classes a redrawn label essentially never repeats.
    ds = Dataset(np.zeros((10, 1)), np.zeros(10, dtype=int), num_classes=10 ** 6)
    noisy = inject_label_noise(ds, NoiseConfig(rate=0.2, seed=4))
    assert int((noisy.labels != ds.labels).sum()) == 2
    assert int(noisy.noisy.sum()) == 2


def test_noise_flags_only_effective_flips():
    ds = generate_blobs(10, 100, 3, 1.0, seed=0)
    noisy = inject_label_noise(ds, NoiseConfig(rate=0.2, seed=5))
    assert noisy.noisy.mean() == pytest.approx(0.18, abs=0.03)
    np.testing.assert_array_equal(noisy.noisy, noisy.labels != ds.labels)


def test_noise_leaves_input_and_features_alone(blobs):
    before = blobs.labels.copy()
    noisy = inject_label_noise(blobs, NoiseConfig(rate=0.5, seed=1))
    np.testing.assert_array_equal(blobs.labels, before)
    assert noisy.features.tobytes() == blobs.features.tobytes()


def test_noise_rate_out_of_range():
    with pytest.raises(ArgumentError):
        NoiseConfig(rate=1.5)


@pytest.mark.parametrize('rate', [0.0, 0.3])
def test_noise_keeps_the_source_id_map(rate):
    train, _ = split(generate_blobs(2, 20, 2, 1.0, seed=2), 0.5, seed=1)
    noisy = inject_label_noise(train, NoiseConfig(rate=rate, seed=6))
    np.testing.assert_array_equal(noisy.source_ids, train.source_ids)
    assert noisy.source_ids.tolist() != list(range(train.N))


def test_split_sizes_and_determinism():
    ds = generate_blobs(2, 5, 2, 1.0, seed=0)
    train, test = split(ds, 0.8, seed=0)
    assert (train.N, test.N) == (8, 2)
    again_train, again_test = split(ds, 0.8, seed=0)
    assert train == again_train and test == again_test
    ids = sorted(train.source_ids.tolist() + test.source_ids.tolist())
    assert ids == list(range(10))
    assert train.ids.tolist() == list(range(8))


def test_split_keeps_one_sample_per_side():
    ds = generate_blobs(2, 5, 2, 1.0, seed=0)
    train, test = split(ds, 0.999, seed=0)
    assert (train.N, test.N) == (9, 1)


@pytest.mark.parametrize('fraction', [0.0, 1.0, -0.1])
def test_split_rejects_degenerate_fraction(fraction):
    with pytest.raises(ArgumentError):
        split(generate_blobs(2, 5, 2, 1.0, seed=0), fraction, seed=0)


def test_dataset_file_round_trip(tmp_path):
    ds = inject_label_noise(generate_blobs(3, 4, 2, 0.7, seed=9), NoiseConfig(0.5, seed=1))
    path = tmp_path / 'train.data'
    write_dataset(ds, path, manifest={'subcommand': 'generate'})
    assert read_dataset(path) == ds


def test_label_out_of_range_names_the_line(tmp_path):
    path = tmp_path / 'bad.data'
    path.write_text('#moso-dataset v1 d=1 K=2 N=2\n0,0,0,0.5\n1,2,0,1.5\n', encoding='utf-8')
    with pytest.raises(ParseError) as info:
        read_dataset(path)
    assert info.value.line == 3
    assert 'line 3' in str(info.value)


def test_empty_file_is_missing_header(tmp_path):
    path = tmp_path / 'empty.data'
    path.write_text('', encoding='utf-8')
    with pytest.raises(ParseError, match='missing header'):
        read_dataset(path)


def test_dimension_mismatch(tmp_path):
    path = tmp_path / 'short.data'
    path.write_text('#moso-dataset v1 d=2 K=2 N=1\n0,1,0,0.5\n', encoding='utf-8')
    with pytest.raises(ParseError, match='line 2'):
        read_dataset(path)


def test_malformed_header(tmp_path):
    path = tmp_path / 'header.data'
    path.write_text('#moso-dataset v1 d=2 K=2\n', encoding='utf-8')
    with pytest.raises(ParseError, match='lacks N'):
        read_dataset(path)


def test_undecodable_bytes_name_the_line(tmp_path):
    path = tmp_path / 'latin1.data'
    path.write_bytes(b'#moso-dataset v1 d=1 K=2 N=2\n0,0,0,0.5\n1,1,0,\xe9\n')
    with pytest.raises(ParseError, match='not valid UTF-8') as info:
        read_dataset(path)
    assert info.value.line == 3
