"""End-to-end data pruning: partition, train surrogates, score, merge, prune.

A dataset can be split into ``I`` non-overlapping, class-stratified subsets.
Each subset gets its own surrogate and is scored on its own, so subsets are
independent jobs; the merged table holds exactly one score per sample.
"""

import logging
import math
from dataclasses import dataclass
from decimal import Decimal
from typing import List, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from .data import Dataset
from .errors import ArgumentError, ConfigurationError, GuardError, ParseError
from .formats import (PathLike, content_lines, format_float, header_float, header_line,
                      manifest_line, parse_header, read_lines, write_lines)
from .model import ModelSpec
from .scoring import (SCORE_METHODS, SamplingRule, ScoreTable, el2n_score, grand_score,
                      moso_approx, random_score)
from .seeds import derive_seed
from .trainer import CaptureRule, FitResult, TrainConfig, fit, forgetting_counts

logger = logging.getLogger(__name__)

PIPELINE_METHODS = ("moso_approx", "grand", "el2n", "forgetting", "random")
_TRACE_METHODS = ("moso_approx", "grand")


@dataclass(frozen=True, eq=False)
class PartitionPlan:
    """Assignment of every sample id to one of ``I`` subsets."""
    I: int
    assignment: np.ndarray
    strategy: str = "stratified_round_robin"

    def __post_init__(self):
        assignment = np.array(self.assignment, dtype=np.int64)
        if assignment.size and (assignment.min() < 0 or assignment.max() >= self.I):
            raise ArgumentError(f"subset indices must lie in [0, {self.I})")
        assignment.setflags(write=False)
        object.__setattr__(self, "assignment", assignment)

    def subsets(self) -> List[np.ndarray]:
        """Ascending ids of each subset."""
        return [np.flatnonzero(self.assignment == i) for i in range(self.I)]


@dataclass(frozen=True)
class PruneConfig:
    """Remove the ``ratio`` lowest-scored samples under ``method``; keep the highest.

    ``prune`` refuses a score table whose method differs from ``method``.
    """
    ratio: float
    method: str = "moso_approx"
    keep_policy: str = "highest"

    def __post_init__(self):
        check_delta(self.ratio)
        if self.method not in SCORE_METHODS:
            raise ArgumentError(f"unknown score method {self.method!r}")
        if self.keep_policy != "highest":
            raise ArgumentError(f"unsupported keep policy {self.keep_policy!r}")


@dataclass(frozen=True)
class Coreset:
    """Kept sample ids of a pruned dataset, tied to that dataset by digest."""
    kept_ids: Tuple[int, ...]
    source_digest: str
    delta: float
    method: str

    def __len__(self) -> int:
        return len(self.kept_ids)


def check_delta(delta: float) -> None:
    if delta >= 1.0:
        raise GuardError("delta must be < 1")
    if delta < 0.0:
        raise ArgumentError(f"delta must be >= 0, got {delta}")


def prune_count(n: int, delta: float) -> int:
    """``floor(delta * n)`` with ``delta`` read as its shortest decimal, so 0.29 * 100 gives 29."""
    return int(math.floor(Decimal(repr(float(delta))) * n))


def make_partition(ds: Dataset, I: int, seed: int) -> PartitionPlan:
    """Stratified round-robin partition into ``I`` subsets.

    Samples are shuffled with ``seed`` and dealt class by class to subsets in
    turn, continuing the turn across classes, so each subset's class counts
    differ from any other's by at most one.
    """
    if not 1 <= I <= ds.N:
        raise ArgumentError(f"number of subsets must be in [1, {ds.N}], got {I}")
    order = np.random.default_rng(seed).permutation(ds.N)
    assignment = np.empty(ds.N, dtype=np.int64)
    cursor = 0
    for c in range(ds.K):
        members = order[ds.labels[order] == c]
        assignment[members] = (cursor + np.arange(members.size)) % I
        cursor += members.size
    return PartitionPlan(I, assignment)


def score_fit(method: str, ds: Dataset, result: Optional[FitResult],
              rule: Optional[SamplingRule] = None, seed: int = 0) -> ScoreTable:
    """Score ``ds`` with ``method`` using a surrogate already trained on it."""
    if method not in PIPELINE_METHODS:
        raise ArgumentError(f"method must be one of {PIPELINE_METHODS}, got {method!r}")
    if method == "random":
        return random_score(ds, seed)
    if result is None:
        raise ArgumentError(f"{method} needs a trained surrogate")
    if method == "moso_approx":
        return moso_approx(ds, result.trace, rule)
    if method == "grand":
        return grand_score(ds, result.trace, rule)
    if method == "el2n":
        return el2n_score(ds, result.final_params)
    return forgetting_counts(result)


def _score_subset(sub: Dataset, spec: ModelSpec, cfg: TrainConfig, rule: SamplingRule,
                  method: str, seed: int) -> ScoreTable:
    result = None
    if method != "random":
        capture = CaptureRule.all_steps() if method in _TRACE_METHODS else CaptureRule.nothing()
        result = fit(sub, spec, cfg, capture=capture, track_history=method == "forgetting")
    return score_fit(method, sub, result, rule, seed)


def score_pipeline(ds: Dataset, spec: ModelSpec, cfg: TrainConfig, plan: PartitionPlan,
                   rule: Optional[SamplingRule] = None, method: str = "moso_approx",
                   seed: int = 0, n_jobs: int = 1) -> ScoreTable:
    """Train one surrogate per subset, score each subset within itself, merge.

    With ``plan.I == 1`` the given seeds are used as they are, so the result
    is identical to scoring ``ds`` directly. Otherwise subset ``i`` gets
    seeds derived from ``(base, "subset", i)``.

    Raises:
        ConfigurationError: a subset holds fewer than two samples.
    """
    rule = rule or SamplingRule.all_steps()
    if method not in PIPELINE_METHODS:
        raise ArgumentError(f"method must be one of {PIPELINE_METHODS}, got {method!r}")
    if plan.assignment.size != ds.N:
        raise ArgumentError("partition plan does not match the dataset")
    jobs = []
    for i, ids in enumerate(plan.subsets()):
        if ids.size < 2:
            raise ConfigurationError(f"subset {i} holds {ids.size} sample(s), too few to form a batch")
        if plan.I == 1:
            sub_spec, sub_cfg, sub_rule, sub_seed = spec, cfg, rule, seed
        else:
            sub_spec = ModelSpec(spec.kind, spec.d, spec.K, spec.hidden,
                                 derive_seed(spec.init_seed, "subset", i), spec.init_scale)
            sub_cfg = TrainConfig(cfg.epochs, cfg.batch_size, cfg.schedule, derive_seed(cfg.shuffle_seed, "subset", i))
            sub_rule = SamplingRule(rule.mode, rule.k, derive_seed(rule.seed, "subset", i), rule.steps)
            sub_seed = derive_seed(seed, "subset", i)
        jobs.append((ids, ds.take(ids), sub_spec, sub_cfg, sub_rule, sub_seed))
    logger.info("scoring %d subset(s) of N=%d with %s", plan.I, ds.N, method)
    tables = Parallel(n_jobs=n_jobs)(
        delayed(_score_subset)(sub, sub_spec, sub_cfg, sub_rule, method, sub_seed)
        for _, sub, sub_spec, sub_cfg, sub_rule, sub_seed in jobs)
    merged = np.full(ds.N, np.nan)
    for (ids, *_), table in zip(jobs, tables):
        merged[ids] = table.values
    digest = tables[0].config_digest
    if plan.I > 1:
        digest = f"{digest};partitions={plan.I}"
    return ScoreTable(method, ScoreTable.from_array(method, merged).scores, digest)


def prune(ds: Dataset, scores: ScoreTable, delta: Union[float, PruneConfig]) -> Coreset:
    """Drop the ``floor(delta * N)`` lowest-scored samples (lower id first on ties).

    ``delta`` is a ratio or a ``PruneConfig``; a bare ratio accepts any score method.

    Raises:
        GuardError: ``delta >= 1``.
        ArgumentError: ``delta < 0``, the scores do not cover ``ds``, or they
            were made by a method other than the config's.
    """
    config = delta if isinstance(delta, PruneConfig) else PruneConfig(delta, scores.method)
    if scores.method != config.method:
        raise ArgumentError(f"expected {config.method} scores, got {scores.method}")
    if not scores.covers(ds):
        raise ArgumentError("score table ids do not match the dataset")
    removed = prune_count(ds.N, config.ratio)
    kept = np.sort(scores.ascending_order()[removed:])
    logger.info("prune %s: removed %d of %d (delta=%g)", scores.method, removed, ds.N, config.ratio)
    return Coreset(tuple(int(i) for i in kept), ds.digest(), float(config.ratio), scores.method)


def materialize(ds: Dataset, coreset: Coreset) -> Dataset:
    """The kept samples as a new dataset; ``source_ids`` maps back to ``ds``."""
    if coreset.source_digest != ds.digest():
        raise ArgumentError("coreset was selected from a different dataset")
    return ds.take(list(coreset.kept_ids))


class Pruner:
    """A fluent interface over surrogate training, scoring and pruning.

    Example:
        >>> coreset = (Pruner(train)
        ...            .surrogate(spec, cfg)
        ...            .score("moso_approx", SamplingRule.uniform_k(10, seed=3))
        ...            .prune(0.3)
        ...            .coreset)
    """

    def __init__(self, ds: Dataset):
        self._ds = ds
        self.fit_result: Optional[FitResult] = None
        self.scores: Optional[ScoreTable] = None
        self.coreset: Optional[Coreset] = None

    def surrogate(self, spec: ModelSpec, cfg: TrainConfig):
        """Train the surrogate, capturing every step."""
        self.fit_result = fit(self._ds, spec, cfg, capture=CaptureRule.all_steps())
        return self

    def score(self, method: str = "moso_approx", rule: Optional[SamplingRule] = None, seed: int = 0):
        """Score the dataset with the trained surrogate."""
        self.scores = score_fit(method, self._ds, self.fit_result, rule, seed)
        return self

    def prune(self, delta: float):
        """Select the coreset at pruning ratio ``delta``."""
        if self.scores is None:
            raise ArgumentError("score the dataset before pruning")
        self.coreset = prune(self._ds, self.scores, PruneConfig(delta, self.scores.method))
        return self

    def materialize(self) -> Dataset:
        if self.coreset is None:
            raise ArgumentError("prune before materializing")
        return materialize(self._ds, self.coreset)


def format_coreset(coreset: Coreset) -> List[str]:
    lines = [header_line("coreset", delta=format_float(coreset.delta), method=coreset.method,
                         source=coreset.source_digest)]
    lines += [str(i) for i in coreset.kept_ids]
    return lines


def write_coreset(coreset: Coreset, path: PathLike, manifest: Optional[dict] = None) -> None:
    lines = format_coreset(coreset)
    lines.insert(1, manifest_line(manifest))
    write_lines(path, lines)


def read_coreset(path: PathLike) -> Coreset:
    where = str(path)
    lines = read_lines(path)
    fields = parse_header(lines[0] if lines else None, "coreset", ("delta", "method", "source"), path=where)
    ids = []
    for lineno, line in content_lines(lines):
        try:
            ids.append(int(line))
        except ValueError:
            raise ParseError(f"expected a sample id, got {line!r}", line=lineno, path=where)
        if len(ids) > 1 and ids[-1] <= ids[-2]:
            raise ParseError("kept ids must be strictly ascending", line=lineno, path=where)
    return Coreset(tuple(ids), fields["source"], header_float(fields, "delta", path=where), fields["method"])
