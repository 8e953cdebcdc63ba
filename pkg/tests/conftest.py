import pytest

from moso import ModelSpec, Schedule, TrainConfig, generate_blobs


@pytest.fixture
def blobs():
    return generate_blobs(num_classes=2, per_class=100, dim=2, spread=0.3, seed=42)


@pytest.fixture
def tiny():
    """32 overlapping samples: small enough for leave-one-out retraining."""
    return generate_blobs(num_classes=2, per_class=16, dim=2, spread=1.0, seed=3)


@pytest.fixture
def logistic(tiny):
    return ModelSpec('logistic', d=tiny.d, K=tiny.K, init_seed=11)


@pytest.fixture
def cfg():
    return TrainConfig(epochs=30, batch_size=32, schedule=Schedule('constant', eta=0.5), shuffle_seed=5)
