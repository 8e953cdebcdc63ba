"""Softmax classifiers with exact per-sample cross-entropy gradients.

Two model kinds share one flat parameter vector ``theta``:

* ``logistic``: multinomial logistic regression, layout ``[W (K x d), b (K)]``.
* ``mlp``: one tanh hidden layer, layout ``[W1 (h x d), b1 (h), W2 (K x h), b2 (K)]``.

Per-sample quantities are computed with ``np.einsum`` row by row, so two
identical samples always get bit-identical gradients.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from .data import Dataset, Sample
from .errors import ArgumentError, ParseError
from .formats import (PathLike, format_float, header_float, header_int, header_line,
                      manifest_line, parse_header, read_lines, write_lines)

logger = logging.getLogger(__name__)

MODEL_KINDS = ("logistic", "mlp")

# Flat gradient vector of length P.
GradVector = np.ndarray


@dataclass(frozen=True)
class ModelSpec:
    """Architecture and initialization of a classifier.

    Args:
        kind: ``"logistic"`` or ``"mlp"``.
        d: Input dimension.
        K: Class count.
        hidden: Hidden width, required (>= 1) for ``mlp``.
        init_seed: Seed of the uniform initialization.
        init_scale: Half-width of the zero-mean uniform initialization.
    """
    kind: str
    d: int
    K: int
    hidden: int = 0
    init_seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ArgumentError(f"kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.d < 1 or self.K < 2:
            raise ArgumentError("need d >= 1 and K >= 2")
        if self.kind == "mlp" and self.hidden < 1:
            raise ArgumentError("mlp needs hidden >= 1")
        if self.kind == "logistic" and self.hidden != 0:
            object.__setattr__(self, "hidden", 0)
        if not self.init_scale > 0:
            raise ArgumentError(f"init_scale must be positive, got {self.init_scale}")

    @property
    def shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        if self.kind == "logistic":
            return [("W", (self.K, self.d)), ("b", (self.K,))]
        return [("W1", (self.hidden, self.d)), ("b1", (self.hidden,)),
                ("W2", (self.K, self.hidden)), ("b2", (self.K,))]

    @property
    def P(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.shapes))

    def unpack(self, theta: np.ndarray) -> Dict[str, np.ndarray]:
        """Views of ``theta`` shaped per layer."""
        blocks, offset = {}, 0
        for name, shape in self.shapes:
            size = int(np.prod(shape))
            blocks[name] = theta[offset:offset + size].reshape(shape)
            offset += size
        return blocks


@dataclass(frozen=True, eq=False)
class ModelParams:
    """A parameter vector bound to its spec. ``theta`` is read-only."""
    spec: ModelSpec
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if theta.shape[0] != self.spec.P:
            raise ArgumentError(f"theta has {theta.shape[0]} entries, spec needs {self.spec.P}")
        if not np.all(np.isfinite(theta)):
            raise ArgumentError("parameters must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.theta, other.theta)

    __hash__ = None

    def replace(self, theta: np.ndarray) -> "ModelParams":
        return ModelParams(self.spec, theta)


def init_params(spec: ModelSpec) -> ModelParams:
    """Draw ``theta`` uniformly from ``[-init_scale, init_scale)`` with ``init_seed``."""
    rng = np.random.default_rng(spec.init_seed)
    return ModelParams(spec, rng.uniform(-spec.init_scale, spec.init_scale, size=spec.P))


def _check_inputs(spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[None, :]
    if features.shape[1] != spec.d:
        raise ArgumentError(f"model expects {spec.d} features, got {features.shape[1]}")
    return features


def _logits(spec: ModelSpec, theta: np.ndarray, X: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    blocks = spec.unpack(theta)
    if spec.kind == "logistic":
        return np.einsum("nd,kd->nk", X, blocks["W"]) + blocks["b"], None
    H = np.tanh(np.einsum("nd,hd->nh", X, blocks["W1"]) + blocks["b1"])
    return np.einsum("nh,kh->nk", H, blocks["W2"]) + blocks["b2"], H


def predict_proba(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch of feature rows, shape ``(n, K)``."""
    X = _check_inputs(params.spec, features)
    logits, _ = _logits(params.spec, params.theta, X)
    return softmax(logits, axis=1)


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Probability vector for one feature vector."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ArgumentError("forward() takes a single feature vector")
    return predict_proba(params, features)[0]


def predict(params: ModelParams, features: np.ndarray) -> np.ndarray:
    X = _check_inputs(params.spec, features)
    logits, _ = _logits(params.spec, params.theta, X)
    return np.argmax(logits, axis=1)


def per_sample_losses(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Cross-entropy ``-ln p[label]`` per row, through ``logsumexp``."""
    X = _check_inputs(params.spec, features)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    logits, _ = _logits(params.spec, params.theta, X)
    return logsumexp(logits, axis=1) - logits[np.arange(labels.size), labels]


def per_sample_grads(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Analytic cross-entropy gradients, one row of length P per sample."""
    spec = params.spec
    X = _check_inputs(spec, features)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = X.shape[0]
    logits, H = _logits(spec, params.theta, X)
    E = softmax(logits, axis=1)
    E[np.arange(n), labels] -= 1.0
    if spec.kind == "logistic":
        gW = np.einsum("nk,nd->nkd", E, X).reshape(n, -1)
        return np.concatenate([gW, E], axis=1)
    blocks = spec.unpack(params.theta)
    gW2 = np.einsum("nk,nh->nkh", E, H).reshape(n, -1)
    dA = np.einsum("nk,kh->nh", E, blocks["W2"]) * (1.0 - H * H)
    gW1 = np.einsum("nh,nd->nhd", dA, X).reshape(n, -1)
    return np.concatenate([gW1, dA, gW2, E], axis=1)


def _view(ds: Dataset, indices: Optional[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    if indices is None:
        X, y = ds.features, ds.labels
    else:
        indices = np.asarray(indices, dtype=np.int64)
        X, y = ds.features[indices], ds.labels[indices]
    if y.size == 0:
        raise ArgumentError("empty dataset view")
    return X, y


def loss(params: ModelParams, sample: Sample) -> float:
    return float(per_sample_losses(params, sample.features, [sample.label])[0])


def mean_loss(params: ModelParams, ds: Dataset, indices: Optional[Sequence[int]] = None) -> float:
    """Average cross-entropy over ``ds`` or over the rows ``indices`` of it."""
    X, y = _view(ds, indices)
    return float(per_sample_losses(params, X, y).mean())


def grad_sample(params: ModelParams, sample: Sample) -> GradVector:
    return per_sample_grads(params, sample.features, [sample.label])[0]


def batch_gradient(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> GradVector:
    """Mean of the per-sample gradients of a batch."""
    return per_sample_grads(params, features, labels).mean(axis=0)


def grad_mean(params: ModelParams, ds: Dataset, indices: Optional[Sequence[int]] = None) -> GradVector:
    """Mean gradient over ``ds`` or over the rows ``indices`` of it."""
    X, y = _view(ds, indices)
    return batch_gradient(params, X, y)


def accuracy(params: ModelParams, ds: Dataset) -> float:
    return float(np.mean(predict(params, ds.features) == ds.labels))


def format_params(params: ModelParams) -> List[str]:
    spec = params.spec
    lines = [header_line("params", kind=spec.kind, d=spec.d, K=spec.K, hidden=spec.hidden, P=spec.P,
                         init_seed=spec.init_seed, init_scale=format_float(spec.init_scale))]
    lines += [format_float(v) for v in params.theta]
    return lines


def parse_params(lines: Sequence[str], start: int = 0, path: Optional[str] = None,
                 linenos: Optional[Sequence[int]] = None) -> Tuple[ModelParams, int]:
    """Parse one params block beginning at ``lines[start]``; return it and the next index.

    ``linenos`` maps indices of ``lines`` to their line numbers in the file when
    metadata lines were dropped before parsing.
    """
    def where(index: int) -> int:
        if linenos is not None and index < len(linenos):
            return linenos[index]
        return index + 1

    lineno = where(start)
    fields = parse_header(lines[start] if start < len(lines) else None, "params",
                          ("kind", "d", "K", "hidden", "P"), lineno=lineno, path=path)
    try:
        spec = ModelSpec(kind=fields["kind"],
                         d=header_int(fields, "d", lineno, path),
                         K=header_int(fields, "K", lineno, path),
                         hidden=header_int(fields, "hidden", lineno, path),
                         init_seed=header_int(fields, "init_seed", lineno, path) if "init_seed" in fields else 0,
                         init_scale=header_float(fields, "init_scale", lineno, path) if "init_scale" in fields else 0.1)
    except ArgumentError as exc:
        raise ParseError(str(exc), line=lineno, path=path)
    P = header_int(fields, "P", lineno, path)
    if P != spec.P:
        raise ParseError(f"P={P} does not match the declared shapes (P={spec.P})", line=lineno, path=path)
    body = lines[start + 1:start + 1 + P]
    if len(body) != P:
        raise ParseError(f"expected {P} parameter values, found {len(body)}", line=lineno, path=path)
    theta = np.empty(P)
    for offset, text in enumerate(body):
        try:
            theta[offset] = float(text)
        except ValueError:
            raise ParseError(f"bad parameter value {text!r}", line=where(start + 1 + offset), path=path)
        if not np.isfinite(theta[offset]):
            raise ParseError(f"parameter value {text!r} is not finite", line=where(start + 1 + offset), path=path)
    return ModelParams(spec, theta), start + 1 + P


def write_params(params: ModelParams, path: PathLike, manifest: Optional[dict] = None) -> None:
    lines = format_params(params)
    write_lines(path, [lines[0], manifest_line(manifest)] + lines[1:])


def read_params(path: PathLike) -> ModelParams:
    numbered = [(index + 1, line) for index, line in enumerate(read_lines(path)) if not line.startswith("##")]
    params, _ = parse_params([line for _, line in numbered], 0, path=str(path),
                             linenos=[lineno for lineno, _ in numbered])
    return params
