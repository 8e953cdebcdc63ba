"""Deterministic mini-batch SGD with checkpoint capture.

Every step applies ``w_t = w_{t-1} - eta_t * mean_grad(B_t, w_{t-1})`` with no
momentum or weight decay. Epoch shuffles are derived from ``shuffle_seed`` and
the epoch index only, so batches can be rebuilt after the fact with
:func:`epoch_batches`.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset
from .errors import ArgumentError, ParseError
from .formats import (PathLike, format_float, header_int, header_line,
                      manifest_line, parse_header, read_lines, write_lines)
from .model import (ModelParams, ModelSpec, accuracy, batch_gradient, format_params, init_params,
                    mean_loss, parse_params, predict)
from .seeds import derive_seed

logger = logging.getLogger(__name__)

SCHEDULE_KINDS = ("constant", "step", "cosine")


@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedule.

    Args:
        kind: ``"constant"`` (``eta``), ``"step"`` (``eta`` times ``factor`` every
            ``drop_every`` epochs) or ``"cosine"`` (``eta`` annealed to ``eta_min``
            over all steps).
        eta: Base (or maximum) learning rate. Zero freezes the parameters.
        drop_every: Epochs between drops, step schedule only.
        factor: Multiplier applied at each drop, step schedule only.
        eta_min: Final rate, cosine schedule only.
    """
    kind: str = "constant"
    eta: float = 0.5
    drop_every: int = 10
    factor: float = 0.1
    eta_min: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ArgumentError(f"schedule must be one of {SCHEDULE_KINDS}, got {self.kind!r}")
        if self.eta < 0 or self.eta_min < 0 or self.factor <= 0:
            raise ArgumentError("learning rates must be non-negative and factor positive")
        if self.drop_every < 1:
            raise ArgumentError("drop_every must be at least 1")

    def rate(self, t: int, total_steps: int, steps_per_epoch: int) -> float:
        """Learning rate of step ``t`` (1-based)."""
        if self.kind == "constant":
            return float(self.eta)
        if self.kind == "step":
            epoch = (t - 1) // steps_per_epoch
            return float(self.eta * self.factor ** (epoch // self.drop_every))
        progress = (t - 1) / max(total_steps - 1, 1)
        return float(self.eta_min + 0.5 * (self.eta - self.eta_min) * (1.0 + math.cos(math.pi * progress)))


@dataclass(frozen=True)
class TrainConfig:
    """SGD budget: ``epochs`` passes in batches of ``batch_size`` (clamped to N)."""
    epochs: int = 30
    batch_size: int = 32
    schedule: Schedule = field(default_factory=Schedule)
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ArgumentError("epochs and batch_size must be positive")

    def steps_per_epoch(self, n: int) -> int:
        return int(math.ceil(n / min(self.batch_size, n)))

    def total_steps(self, n: int) -> int:
        return self.epochs * self.steps_per_epoch(n)


@dataclass(frozen=True)
class CaptureRule:
    """Which steps of a fit are kept in the checkpoint trace."""
    mode: str = "all"
    every: int = 1
    steps: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in ("all", "every", "steps", "none"):
            raise ArgumentError(f"unknown capture mode {self.mode!r}")
        if self.mode == "every" and self.every < 1:
            raise ArgumentError("capture interval must be at least 1")
        if self.mode == "steps" and list(self.steps) != sorted(set(self.steps)):
            raise ArgumentError("capture steps must be sorted and unique")

    @classmethod
    def all_steps(cls) -> "CaptureRule":
        return cls("all")

    @classmethod
    def every_k(cls, k: int) -> "CaptureRule":
        return cls("every", every=k)

    @classmethod
    def at(cls, steps: Sequence[int]) -> "CaptureRule":
        return cls("steps", steps=tuple(int(t) for t in steps))

    @classmethod
    def nothing(cls) -> "CaptureRule":
        return cls("none")

    def captures(self, t: int) -> bool:
        if self.mode == "all":
            return True
        if self.mode == "every":
            return t % self.every == 0
        if self.mode == "steps":
            return t in self.steps
        return False


@dataclass(frozen=True)
class Checkpoint:
    t: int
    eta: float
    params: ModelParams


@dataclass(frozen=True)
class CheckpointTrace:
    """Parameters ``w_t`` after step ``t`` and the rate ``eta_t`` used for it.

    ``T`` is the total step count of the run that produced the trace and ``N``
    the size of its training set.
    """
    entries: Tuple[Checkpoint, ...]
    T: int
    N: int

    def __post_init__(self):
        entries = tuple(self.entries)
        steps = [entry.t for entry in entries]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ArgumentError("checkpoint steps must be strictly increasing")
        if steps and (steps[0] < 1 or steps[-1] > self.T):
            raise ArgumentError(f"checkpoint steps must lie in [1, {self.T}]")
        object.__setattr__(self, "entries", entries)

    @property
    def steps(self) -> List[int]:
        return [entry.t for entry in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def at(self, t: int) -> Optional[Checkpoint]:
        for entry in self.entries:
            if entry.t == t:
                return entry
        return None

    def scaled(self, c: float) -> "CheckpointTrace":
        """Same checkpoints with every learning rate multiplied by ``c``."""
        return CheckpointTrace(tuple(Checkpoint(e.t, e.eta * c, e.params) for e in self.entries), self.T, self.N)


@dataclass(frozen=True)
class FitResult:
    """Outcome of :func:`fit`.

    ``correctness_history[i, e]`` is true when sample ``i`` was predicted
    correctly at the end of epoch ``e``.
    """
    final_params: ModelParams
    trace: CheckpointTrace
    correctness_history: np.ndarray


def epoch_batches(n: int, cfg: TrainConfig, epoch: int) -> List[np.ndarray]:
    """Index batches of one epoch; the last batch keeps the ``n mod batch_size`` remainder."""
    order = np.random.default_rng(derive_seed(cfg.shuffle_seed, "epoch", epoch)).permutation(n)
    size = min(cfg.batch_size, n)
    return [order[start:start + size] for start in range(0, n, size)]


def _check_fit_inputs(ds: Dataset, spec: ModelSpec) -> None:
    if ds.N == 0:
        raise ArgumentError("cannot train on empty set")
    if spec.d != ds.d or spec.K != ds.K:
        raise ArgumentError(f"model expects d={spec.d}, K={spec.K}; dataset has d={ds.d}, K={ds.K}")


def fit(ds: Dataset, spec: ModelSpec, cfg: TrainConfig, capture: Optional[CaptureRule] = None,
        track_history: bool = True) -> FitResult:
    """Train a surrogate from ``init_params(spec)`` with plain SGD.

    Args:
        ds: Training set.
        spec: Model architecture and initialization.
        cfg: Epoch budget, batch size, schedule and shuffle seed.
        capture: Steps to snapshot into the trace; all steps by default.
        track_history: Record per-epoch correctness for forgetting counts.

    Returns:
        FitResult: final parameters, captured trace and correctness history.
    """
    _check_fit_inputs(ds, spec)
    capture = capture or CaptureRule.all_steps()
    X, y = ds.features, ds.labels
    per_epoch = cfg.steps_per_epoch(ds.N)
    T = cfg.epochs * per_epoch
    params = init_params(spec)
    theta = params.theta.copy()
    entries = []
    history = np.zeros((ds.N, cfg.epochs if track_history else 0), dtype=bool)
    t = 0
    for epoch in range(cfg.epochs):
        for batch in epoch_batches(ds.N, cfg, epoch):
            t += 1
            eta = cfg.schedule.rate(t, T, per_epoch)
            grad = batch_gradient(params.replace(theta), X[batch], y[batch])
            theta = theta - eta * grad
            if capture.captures(t):
                entries.append(Checkpoint(t, eta, params.replace(theta)))
        current = params.replace(theta)
        if track_history:
            history[:, epoch] = predict(current, X) == y
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug("epoch %d/%d: loss %.6f", epoch + 1, cfg.epochs, mean_loss(current, ds))
    final = params.replace(theta)
    history.setflags(write=False)
    logger.info("fit %d steps on N=%d (%s): train accuracy %.4f, captured %d checkpoints",
                T, ds.N, spec.kind, accuracy(final, ds), len(entries))
    return FitResult(final, CheckpointTrace(tuple(entries), T, ds.N), history)


def retrain_without(ds: Dataset, excluded_id: int, spec: ModelSpec, cfg: TrainConfig) -> ModelParams:
    """Retrain from the same initialization and shuffle seed on ``S`` minus one sample."""
    reduced = ds.without(excluded_id)
    return fit(reduced, spec, cfg, capture=CaptureRule.nothing(), track_history=False).final_params


def forgetting_counts(result: FitResult):
    """Correct-to-incorrect transitions per sample; never-learned samples score ``epochs``."""
    from .scoring import ScoreTable

    history = np.asarray(result.correctness_history, dtype=bool)
    epochs = history.shape[1]
    forgotten = np.sum(history[:, :-1] & ~history[:, 1:], axis=1).astype(np.float64)
    forgotten[~history.any(axis=1)] = float(epochs)
    return ScoreTable.from_array("forgetting", forgotten, {"epochs": epochs})


def format_trace(trace: CheckpointTrace) -> List[str]:
    lines = [header_line("trace", T=trace.T, N=trace.N, count=len(trace))]
    for entry in trace.entries:
        lines.append(f"t={entry.t} eta={format_float(entry.eta)}")
        lines += format_params(entry.params)
    return lines


def write_trace(trace: CheckpointTrace, path: PathLike, manifest: Optional[dict] = None) -> None:
    lines = format_trace(trace)
    write_lines(path, [lines[0], manifest_line(manifest)] + lines[1:])


def read_trace(path: PathLike) -> CheckpointTrace:
    where = str(path)
    numbered = [(index + 1, line) for index, line in enumerate(read_lines(path)) if not line.startswith("##")]
    lines = [line for _, line in numbered]
    linenos = [lineno for lineno, _ in numbered]
    fields = parse_header(lines[0] if lines else None, "trace", ("T", "N", "count"),
                          lineno=linenos[0] if linenos else 1, path=where)
    T, N, count = (header_int(fields, key, linenos[0], where) for key in ("T", "N", "count"))
    entries, index = [], 1
    for _ in range(count):
        if index >= len(lines):
            raise ParseError(f"expected {count} checkpoints, found {len(entries)}", path=where)
        step = parse_header("#moso-step v1 " + lines[index], "step", ("t", "eta"),
                            lineno=linenos[index], path=where)
        try:
            t, eta = int(step["t"]), float(step["eta"])
        except ValueError:
            raise ParseError(f"bad step line {lines[index]!r}", line=linenos[index], path=where)
        params, index = parse_params(lines, index + 1, path=where, linenos=linenos)
        entries.append(Checkpoint(t, eta, params))
    return CheckpointTrace(tuple(entries), T, N)
