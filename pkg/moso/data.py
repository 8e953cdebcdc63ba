"""Datasets: synthetic generation, label noise, splitting and the on-disk format."""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

from .errors import ArgumentError, ParseError
from .formats import (PathLike, content_lines, format_float, header_int, header_line,
                      manifest_line, parse_header, read_lines, write_lines)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sample:
    """One training example ``(x, y)`` with its id and noise flag."""
    id: int
    features: np.ndarray
    label: int
    noisy: bool = False


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of samples with ids ``0..N-1``.

    Args:
        features: ``(N, d)`` array of finite 64-bit floats.
        labels: ``(N,)`` class indices in ``[0, K)``.
        num_classes: Class count ``K >= 2``.
        noisy: ``(N,)`` flags, true where label noise changed the label.
        source_ids: ``(N,)`` ids of the same samples in the dataset this one
            was taken from. Defaults to ``0..N-1``.
    """
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    noisy: Optional[np.ndarray] = None
    source_ids: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, ndmin=2)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        n = labels.shape[0]
        if features.shape[0] != n:
            raise ArgumentError(f"{features.shape[0]} feature rows for {n} labels")
        if int(self.num_classes) < 2:
            raise ArgumentError(f"need at least 2 classes, got {self.num_classes}")
        if n and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ArgumentError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(features)):
            raise ArgumentError("features must be finite")
        noisy = np.zeros(n, dtype=bool) if self.noisy is None else np.array(self.noisy, dtype=bool).reshape(-1)
        source = np.arange(n, dtype=np.int64) if self.source_ids is None else np.array(self.source_ids, dtype=np.int64).reshape(-1)
        if noisy.shape[0] != n or source.shape[0] != n:
            raise ArgumentError("noisy flags and source ids must have one entry per sample")
        for array in (features, labels, noisy, source):
            array.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "noisy", noisy)
        object.__setattr__(self, "source_ids", source)
        object.__setattr__(self, "num_classes", int(self.num_classes))

    @property
    def N(self) -> int:
        return int(self.labels.shape[0])

    @property
    def K(self) -> int:
        return self.num_classes

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.N, dtype=np.int64)

    def __len__(self) -> int:
        return self.N

    def __getitem__(self, index: int) -> Sample:
        index = int(index)
        if not 0 <= index < self.N:
            raise ArgumentError(f"sample id {index} not in dataset of size {self.N}")
        return Sample(index, self.features[index], int(self.labels[index]), bool(self.noisy[index]))

    @property
    def samples(self) -> List[Sample]:
        return [self[i] for i in range(self.N)]

    def one_hot(self) -> np.ndarray:
        return np.eye(self.K)[self.labels]

    def take(self, indices: Sequence[int]) -> "Dataset":
        """New dataset of the given samples, re-indexed from 0, remembering their ids here."""
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        if indices.size and (indices.min() < 0 or indices.max() >= self.N):
            raise ArgumentError("take() indices out of range")
        return Dataset(self.features[indices], self.labels[indices], self.K,
                       noisy=self.noisy[indices], source_ids=indices)

    def without(self, sample_id: int) -> "Dataset":
        if not 0 <= int(sample_id) < self.N:
            raise ArgumentError(f"sample id {sample_id} not in dataset of size {self.N}")
        return self.take(np.delete(np.arange(self.N), int(sample_id)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.K == other.K and self.features.shape == other.features.shape
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.noisy, other.noisy)
                and np.array_equal(self.features, other.features))

    __hash__ = None

    def digest(self) -> str:
        """Content digest used to tie coresets to the dataset they came from."""
        text = "\n".join(format_dataset(self))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=[f"f{j}" for j in range(self.d)])
        frame.insert(0, "noisy", self.noisy)
        frame.insert(0, "label", self.labels)
        frame.insert(0, "id", self.ids)
        return frame


@dataclass(frozen=True)
class NoiseConfig:
    """Symmetric label noise: ``rate`` of the samples get a label drawn from all K classes."""
    rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ArgumentError(f"noise rate must be in [0, 1], got {self.rate}")


def generate_blobs(num_classes: int, per_class: int, dim: int, spread: float, seed: int,
                   separation: float = 4.0) -> Dataset:
    """Balanced Gaussian clusters, one per class.

    Class means are drawn from ``seed``, centred on the origin and rescaled so
    the closest pair sits ``separation`` apart; each sample is its class mean
    plus isotropic noise of standard deviation ``spread``.
    """
    if num_classes < 2 or per_class < 1 or dim < 1:
        raise ArgumentError("generate_blobs needs num_classes >= 2, per_class >= 1 and dim >= 1")
    if not spread > 0:
        raise ArgumentError(f"spread must be positive, got {spread}")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, dim))
    closest = pdist(means).min()
    means = (means - means.mean(axis=0)) * (separation / closest)
    labels = np.repeat(np.arange(num_classes), per_class)
    features = means[labels] + spread * rng.standard_normal((labels.size, dim))
    return Dataset(features, labels, num_classes)


def inject_label_noise(ds: Dataset, cfg: NoiseConfig) -> Dataset:
    """Redraw the labels of ``round(rate * N)`` samples uniformly over all classes.

    The redrawn label may equal the original one; ``noisy`` marks only the
    samples whose label actually changed. Features are carried over untouched.
    """
    count = int(round(cfg.rate * ds.N))
    if count == 0:
        return Dataset(ds.features, ds.labels, ds.K, noisy=ds.noisy, source_ids=ds.source_ids)
    rng = np.random.default_rng(cfg.seed)
    chosen = rng.choice(ds.N, size=count, replace=False)
    redrawn = rng.integers(0, ds.K, size=count)
    labels = ds.labels.copy()
    noisy = ds.noisy.copy()
    labels[chosen] = redrawn
    noisy[chosen] = redrawn != ds.labels[chosen]
    logger.info("redrew %d of %d labels, %d changed", count, ds.N, int(noisy[chosen].sum()))
    return Dataset(ds.features, labels, ds.K, noisy=noisy, source_ids=ds.source_ids)


def split(ds: Dataset, train_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Shuffled train/test split.

    The test side gets ``(1 - train_fraction) * N`` samples rounded half down,
    clamped so each side keeps at least one sample. Each side is re-indexed
    from 0; ``source_ids`` maps back to ``ds``.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ArgumentError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if ds.N < 2:
        raise ArgumentError("cannot split fewer than 2 samples")
    n_test = int(np.ceil((1.0 - train_fraction) * ds.N - 0.5))
    n_test = min(max(n_test, 1), ds.N - 1)
    order = np.random.default_rng(seed).permutation(ds.N)
    return ds.take(order[n_test:]), ds.take(order[:n_test])


def format_dataset(ds: Dataset) -> List[str]:
    lines = [header_line("dataset", d=ds.d, K=ds.K, N=ds.N)]
    for i in range(ds.N):
        values = ",".join(format_float(v) for v in ds.features[i])
        lines.append(f"{i},{int(ds.labels[i])},{int(ds.noisy[i])},{values}")
    return lines


def write_dataset(ds: Dataset, path: PathLike, manifest: Optional[dict] = None) -> None:
    lines = format_dataset(ds)
    lines.insert(1, manifest_line(manifest))
    write_lines(path, lines)


def read_dataset(path: PathLike) -> Dataset:
    """Read a ``#moso-dataset v1`` file.

    Raises:
        ParseError: naming the offending line for a bad header, a wrong
            feature count, an out-of-range label or a non-contiguous id.
    """
    where = str(path)
    lines = read_lines(path)
    fields = parse_header(lines[0] if lines else None, "dataset", ("d", "K", "N"), path=where)
    d, K, N = (header_int(fields, key, path=where) for key in ("d", "K", "N"))
    if K < 2:
        raise ParseError(f"K must be at least 2, got {K}", line=1, path=where)
    features = np.empty((N, d), dtype=np.float64)
    labels = np.empty(N, dtype=np.int64)
    noisy = np.empty(N, dtype=bool)
    count = 0
    for lineno, line in content_lines(lines):
        cells = line.split(",")
        if len(cells) != 3 + d:
            raise ParseError(f"expected {d} features, got {len(cells) - 3}", line=lineno, path=where)
        try:
            sample_id, label, flag = int(cells[0]), int(cells[1]), int(cells[2])
            values = [float(cell) for cell in cells[3:]]
        except ValueError as exc:
            raise ParseError(f"bad value ({exc})", line=lineno, path=where)
        if sample_id != count or count >= N:
            raise ParseError(f"expected sample id {count}, got {sample_id}", line=lineno, path=where)
        if not 0 <= label < K:
            raise ParseError(f"label {label} out of range for K={K}", line=lineno, path=where)
        if flag not in (0, 1):
            raise ParseError(f"noisy flag must be 0 or 1, got {flag}", line=lineno, path=where)
        if not all(np.isfinite(values)):
            raise ParseError("features must be finite", line=lineno, path=where)
        features[count], labels[count], noisy[count] = values, label, bool(flag)
        count += 1
    if count != N:
        raise ParseError(f"header declares N={N} but file holds {count} samples", path=where)
    return Dataset(features, labels, K, noisy=noisy)
