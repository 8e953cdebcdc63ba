"""Sample scores: the MoSo approximator, its leave-one-out oracle and baselines.

The approximate MoSo score of a sample ``z`` is

    M(z) ~ mean over sampled steps t of (T / N) * eta_t * <g_loo(t), g_z(t)>

where ``g_z(t)`` is the gradient of ``z``'s loss at checkpoint ``w_t`` and
``g_loo(t)`` the mean gradient of every other sample at the same checkpoint.
High scores mark samples whose removal would raise the loss of the rest;
harmful samples (e.g. mislabeled ones) score negative.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .data import Dataset
from .errors import ArgumentError, ConfigurationError, GuardError, ParseError
from .formats import (PathLike, content_lines, format_float, header_line, manifest_line,
                      parse_header, read_lines, write_lines)
from .model import GradVector, ModelParams, ModelSpec, mean_loss, per_sample_grads, predict_proba
from .trainer import CaptureRule, CheckpointTrace, FitResult, TrainConfig, fit, retrain_without

logger = logging.getLogger(__name__)

SCORE_METHODS = ("moso_approx", "moso_exact", "grand", "el2n", "forgetting", "random")
SAMPLING_MODES = ("all_steps", "uniform_k", "last_step", "explicit")
DEFAULT_MAX_EXACT_N = 10_000


def config_digest(config: Dict[str, object]) -> str:
    """Stable ``key=value;...`` rendering of a scoring configuration."""
    if not config:
        return "-"
    return ";".join(f"{key}={config[key]}" for key in sorted(config))


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """One score per sample id, tagged with the method and its settings.

    Args:
        method: One of ``SCORE_METHODS``.
        scores: Float series indexed by sample id, ascending.
        config_digest: Seeds and sampling settings that produced the scores.
    """
    method: str
    scores: pd.Series
    config_digest: str = "-"

    def __post_init__(self):
        if self.method not in SCORE_METHODS:
            raise ArgumentError(f"unknown score method {self.method!r}")
        scores = pd.Series(self.scores, dtype=np.float64).sort_index()
        scores.index = scores.index.astype(np.int64)
        scores.index.name = "id"
        if scores.index.has_duplicates:
            raise ArgumentError("score table holds duplicate ids")
        if not np.all(np.isfinite(scores.to_numpy())):
            raise ArgumentError("scores must be finite")
        if any(c.isspace() for c in self.config_digest):
            raise ArgumentError("config digest must not contain whitespace")
        object.__setattr__(self, "scores", scores)

    @classmethod
    def from_array(cls, method: str, values: np.ndarray, config: Optional[dict] = None) -> "ScoreTable":
        values = np.asarray(values, dtype=np.float64)
        return cls(method, pd.Series(values, index=np.arange(values.size, dtype=np.int64)),
                   config_digest(config or {}))

    @property
    def ids(self) -> np.ndarray:
        return self.scores.index.to_numpy()

    @property
    def values(self) -> np.ndarray:
        return self.scores.to_numpy()

    def __len__(self) -> int:
        return len(self.scores)

    def is_constant(self) -> bool:
        return self.scores.nunique() <= 1

    def covers(self, ds: Dataset) -> bool:
        return len(self) == ds.N and np.array_equal(self.ids, ds.ids)

    def equals(self, other: "ScoreTable") -> bool:
        return (self.method == other.method and self.config_digest == other.config_digest
                and np.array_equal(self.ids, other.ids) and np.array_equal(self.values, other.values))

    def ascending_order(self) -> np.ndarray:
        """Ids from lowest to highest score, ties broken by ascending id."""
        return self.ids[np.lexsort((self.ids, self.values))]


@dataclass(frozen=True)
class SamplingRule:
    """Which captured checkpoints enter the expectation over training steps.

    Modes:
        ``all_steps``: every captured step (seed is ignored).
        ``uniform_k``: ``k`` captured steps drawn without replacement with ``seed``.
        ``last_step``: only the final captured step.
        ``explicit``: the given ``steps``, each of which must be captured.
    """
    mode: str = "all_steps"
    k: int = 10
    seed: int = 0
    steps: tuple = field(default=())

    def __post_init__(self):
        if self.mode not in SAMPLING_MODES:
            raise ArgumentError(f"sampling mode must be one of {SAMPLING_MODES}, got {self.mode!r}")
        if self.mode == "uniform_k" and self.k < 1:
            raise ArgumentError("uniform_k sampling needs k >= 1")

    @classmethod
    def all_steps(cls) -> "SamplingRule":
        return cls("all_steps")

    @classmethod
    def uniform_k(cls, k: int, seed: int = 0) -> "SamplingRule":
        return cls("uniform_k", k=k, seed=seed)

    @classmethod
    def last_step(cls) -> "SamplingRule":
        return cls("last_step")

    @classmethod
    def explicit(cls, steps: Sequence[int]) -> "SamplingRule":
        return cls("explicit", steps=tuple(sorted(int(t) for t in steps)))

    @classmethod
    def at_rate(cls, rate: float, captured: int, seed: int = 0) -> "SamplingRule":
        """Draw ``ceil(rate * captured)`` of the captured steps."""
        if not 0.0 < rate <= 1.0:
            raise ArgumentError(f"sampling rate must be in (0, 1], got {rate}")
        return cls.uniform_k(max(1, int(math.ceil(rate * captured - 1e-9))), seed)

    def config(self) -> dict:
        if self.mode == "uniform_k":
            return {"sampling": self.mode, "k": self.k, "sampling_seed": self.seed}
        if self.mode == "explicit":
            return {"sampling": self.mode, "steps": "/".join(str(t) for t in self.steps)}
        return {"sampling": self.mode}

    def select(self, trace: CheckpointTrace) -> List[int]:
        """Sampled steps in ascending order."""
        captured = trace.steps
        if not captured:
            raise ConfigurationError("checkpoint trace is empty")
        if self.mode == "all_steps":
            return captured
        if self.mode == "last_step":
            return captured[-1:]
        if self.mode == "explicit":
            available = set(captured)
            for t in self.steps:
                if t not in available:
                    raise ConfigurationError(f"step {t} is not captured in the trace")
            return list(self.steps)
        if self.k > len(captured):
            raise ConfigurationError(f"cannot sample {self.k} steps from {len(captured)} captured checkpoints")
        chosen = np.random.default_rng(self.seed).choice(captured, size=self.k, replace=False)
        return sorted(int(t) for t in chosen)


def loo_mean_gradient(full_mean: GradVector, g_z: GradVector, N: int) -> GradVector:
    """Mean gradient over ``S`` without ``z``: ``(N * full_mean - g_z) / (N - 1)``.

    ``g_z`` may hold one gradient per row to treat every sample at once.
    """
    if N < 2:
        raise ArgumentError(f"leave-one-out mean needs N >= 2, got {N}")
    return (N * np.asarray(full_mean) - np.asarray(g_z)) / (N - 1)


def approx_term(full_mean: GradVector, g_z: GradVector, N: int, T: int, eta: float):
    """One step's contribution ``(T/N) * eta * <g_loo, g_z>``, row-wise for 2-D ``g_z``."""
    g_z = np.asarray(g_z)
    loo = loo_mean_gradient(full_mean, g_z, N)
    return (T / N) * eta * np.sum(loo * g_z, axis=-1)


def _check_trace(ds: Dataset, trace: CheckpointTrace) -> None:
    if trace.N != ds.N:
        raise ConfigurationError(f"trace was captured on N={trace.N} samples, dataset has N={ds.N}")


def _step_terms(ds: Dataset, trace: CheckpointTrace, steps: Sequence[int]) -> np.ndarray:
    """``(len(steps), N)`` matrix of per-step MoSo contributions."""
    terms = np.empty((len(steps), ds.N))
    for row, t in enumerate(steps):
        entry = trace.at(t)
        G = per_sample_grads(entry.params, ds.features, ds.labels)
        terms[row] = approx_term(G.mean(axis=0), G, ds.N, trace.T, entry.eta)
    return terms


def _ordered_mean(rows: np.ndarray) -> np.ndarray:
    total = np.zeros(rows.shape[1])
    for row in rows:
        total += row
    return total / rows.shape[0]


def moso_approx(ds: Dataset, trace: CheckpointTrace, rule: Optional[SamplingRule] = None) -> ScoreTable:
    """First-order MoSo scores from a surrogate's checkpoint trace.

    The full-set mean gradient is computed once per checkpoint; the
    leave-one-out mean for every sample follows from it in closed form, so
    the cost is linear in N per sampled step.

    Raises:
        ConfigurationError: trace and dataset sizes differ, or the rule asks
            for a step the trace does not hold.
    """
    rule = rule or SamplingRule.all_steps()
    _check_trace(ds, trace)
    steps = rule.select(trace)
    scores = _ordered_mean(_step_terms(ds, trace, steps))
    logger.info("moso_approx: N=%d over %d of %d captured steps", ds.N, len(steps), len(trace))
    return ScoreTable.from_array("moso_approx", scores, rule.config())


def grand_score(ds: Dataset, trace: CheckpointTrace, rule: Optional[SamplingRule] = None) -> ScoreTable:
    """Mean per-sample gradient norm over the sampled checkpoints."""
    rule = rule or SamplingRule.all_steps()
    _check_trace(ds, trace)
    steps = rule.select(trace)
    norms = np.empty((len(steps), ds.N))
    for row, t in enumerate(steps):
        G = per_sample_grads(trace.at(t).params, ds.features, ds.labels)
        norms[row] = np.linalg.norm(G, axis=1)
    logger.info("grand: N=%d over %d steps", ds.N, len(steps))
    return ScoreTable.from_array("grand", _ordered_mean(norms), rule.config())


def el2n_score(ds: Dataset, params: ModelParams) -> ScoreTable:
    """L2 norm of ``softmax - one_hot(label)`` under a single model."""
    error = predict_proba(params, ds.features) - ds.one_hot()
    return ScoreTable.from_array("el2n", np.linalg.norm(error, axis=1), {"models": 1})


def random_score(ds: Dataset, seed: int) -> ScoreTable:
    """Uniform scores in ``(0, 1)``; pruning by them is random selection."""
    rng = np.random.default_rng(seed)
    values = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=ds.N)
    return ScoreTable.from_array("random", values, {"seed": seed})


def _exact_one(ds: Dataset, z: int, spec: ModelSpec, cfg: TrainConfig, full: ModelParams) -> float:
    logger.debug("retraining without sample %d of %d", z, ds.N)
    reduced = retrain_without(ds, z, spec, cfg)
    rest = np.delete(np.arange(ds.N), z)
    return mean_loss(reduced, ds, rest) - mean_loss(full, ds, rest)


def _guard(ds: Dataset, max_n: int) -> None:
    if ds.N > max_n:
        raise GuardError(f"exact MoSo needs {ds.N} retrainings, O(T*n^2) overall; "
                         f"N={ds.N} exceeds the limit of {max_n}")


def moso_exact(ds: Dataset, spec: ModelSpec, cfg: TrainConfig, full_fit: FitResult,
               max_n: int = DEFAULT_MAX_EXACT_N, n_jobs: int = 1) -> ScoreTable:
    """Leave-one-out MoSo: ``L(S/z, w*_{S/z}) - L(S/z, w*_S)`` for every ``z``.

    Each ``w*_{S/z}`` comes from an independent retraining with the full-set
    initialization and shuffle seed; retrainings run as ``n_jobs`` joblib jobs.

    Raises:
        GuardError: ``ds.N > max_n``.
    """
    _guard(ds, max_n)
    full = full_fit.final_params
    logger.info("moso_exact: %d leave-one-out retrainings, %d jobs", ds.N, n_jobs)
    scores = Parallel(n_jobs=n_jobs)(delayed(_exact_one)(ds, z, spec, cfg, full) for z in range(ds.N))
    return ScoreTable.from_array("moso_exact", np.array(scores),
                                 {"epochs": cfg.epochs, "init_seed": spec.init_seed, "shuffle_seed": cfg.shuffle_seed})


def approximation_error_probe(ds: Dataset, spec: ModelSpec, cfg: TrainConfig, budgets: Sequence[int],
                              rule: Optional[SamplingRule] = None, max_n: int = DEFAULT_MAX_EXACT_N,
                              n_jobs: int = 1) -> pd.DataFrame:
    """Mean ``|M - M_hat|`` for each epoch budget.

    The error bound of the first-order approximation grows with the number of
    steps ``T``, the learning rate and the gradient norm bound; this probe
    reports the measured error so that trend can be inspected. It makes no
    pass/fail judgement.
    """
    _guard(ds, max_n)
    rule = rule or SamplingRule.all_steps()
    rows = []
    for epochs in budgets:
        budget = TrainConfig(int(epochs), cfg.batch_size, cfg.schedule, cfg.shuffle_seed)
        result = fit(ds, spec, budget, capture=CaptureRule.all_steps(), track_history=False)
        approx = moso_approx(ds, result.trace, rule)
        exact = moso_exact(ds, spec, budget, result, max_n=max_n, n_jobs=n_jobs)
        error = float(np.mean(np.abs(exact.values - approx.values)))
        logger.info("probe: epochs=%d T=%d mean |M - M_hat| = %.3e", epochs, result.trace.T, error)
        rows.append({"epochs": int(epochs), "T": result.trace.T, "mean_abs_error": error})
    return pd.DataFrame(rows, columns=["epochs", "T", "mean_abs_error"])


def sampling_variance(ds: Dataset, trace: CheckpointTrace, rates: Sequence[float],
                      seeds: Sequence[int]) -> pd.DataFrame:
    """Mean per-sample variance of approximate scores across sampling seeds, per rate."""
    _check_trace(ds, trace)
    captured = trace.steps
    terms = dict(zip(captured, _step_terms(ds, trace, captured)))
    rows = []
    for rate in rates:
        tables = []
        for seed in seeds:
            rule = SamplingRule.at_rate(rate, len(captured), seed)
            steps = rule.select(trace)
            tables.append(_ordered_mean(np.stack([terms[t] for t in steps])))
        variance = np.var(np.stack(tables), axis=0)
        rows.append({"rate": float(rate), "k": rule.k, "mean_variance": float(variance.mean())})
    return pd.DataFrame(rows, columns=["rate", "k", "mean_variance"])


def format_scores(table: ScoreTable) -> List[str]:
    lines = [header_line("scores", method=table.method, config=table.config_digest)]
    lines += [f"{int(i)},{format_float(v)}" for i, v in zip(table.ids, table.values)]
    return lines


def write_scores(table: ScoreTable, path: PathLike, manifest: Optional[dict] = None) -> None:
    lines = format_scores(table)
    lines.insert(1, manifest_line(manifest))
    write_lines(path, lines)


def read_scores(path: PathLike) -> ScoreTable:
    where = str(path)
    lines = read_lines(path)
    fields = parse_header(lines[0] if lines else None, "scores", ("method", "config"), path=where)
    if fields["method"] not in SCORE_METHODS:
        raise ParseError(f"unknown score method {fields['method']!r}", line=1, path=where)
    ids, values = [], []
    for lineno, line in content_lines(lines):
        cells = line.split(",")
        try:
            sample_id, value = int(cells[0]), float(cells[1])
        except (ValueError, IndexError):
            raise ParseError(f"expected '<id>,<score>', got {line!r}", line=lineno, path=where)
        if len(cells) != 2 or not math.isfinite(value):
            raise ParseError(f"expected '<id>,<score>' with a finite score, got {line!r}", line=lineno, path=where)
        if ids and sample_id <= ids[-1]:
            raise ParseError("ids must be strictly ascending", line=lineno, path=where)
        ids.append(sample_id)
        values.append(value)
    return ScoreTable(fields["method"], pd.Series(values, index=np.array(ids, dtype=np.int64)), fields["config"])
