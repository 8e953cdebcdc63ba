"""Command-line entry point: ``moso generate | score | prune | eval | compare | oracle``.

Every subcommand reads named input files and writes named output files. One
``--seed`` fans out to all component seeds, and each artifact embeds the run
manifest, so a manifest fully determines the output bytes.
"""

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from . import __version__
from .data import NoiseConfig, generate_blobs, inject_label_noise, read_dataset, split, write_dataset
from .errors import GuardError, MosoError, ParseError
from .evaluation import emit_plot_data, emit_report, evaluate_coreset, noise_detection, spearman
from .formats import format_float, header_line, manifest_line, write_lines
from .model import MODEL_KINDS, ModelSpec
from .pipeline import (PIPELINE_METHODS, PruneConfig, check_delta, make_partition, prune, read_coreset,
                       score_pipeline, write_coreset)
from .scoring import (DEFAULT_MAX_EXACT_N, SamplingRule, approximation_error_probe, moso_approx,
                      moso_exact, read_scores, write_scores)
from .seeds import component_seeds
from .trainer import SCHEDULE_KINDS, CaptureRule, Schedule, TrainConfig, fit

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_GUARD = 3
EXIT_PARSE = 4
EXIT_MISSING_FILE = 5

DEFAULT_DELTAS = "0.2,0.3,0.4,0.5,0.6,0.7,0.8"
DEFAULT_METHODS = "moso,random,grand,el2n,forgetting"
LOG_FORMAT = "%(asctime)-15s [%(name)s-%(process)d] %(levelname)s: %(message)s"


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to rerun a subcommand: its flags (defaults resolved), seed and version."""
    subcommand: str
    flags: Dict[str, object]
    seed: int
    version: str = __version__

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunManifest":
        flags = {key: value for key, value in sorted(vars(args).items()) if key not in ("func", "command", "log_level")}
        return cls(args.command, flags, args.seed)

    def to_dict(self) -> dict:
        return asdict(self)


def _method(name: str) -> str:
    return "moso_approx" if name == "moso" else name


def _floats(text: str) -> List[float]:
    try:
        return [float(cell) for cell in text.split(",") if cell.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _methods(text: str) -> List[str]:
    names = [_method(cell.strip()) for cell in text.split(",") if cell.strip()]
    unknown = [name for name in names if name not in PIPELINE_METHODS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown method(s): {', '.join(unknown)}")
    return names


def _spec(args: argparse.Namespace, d: int, K: int) -> ModelSpec:
    hidden = args.hidden if args.model == "mlp" else 0
    return ModelSpec(args.model, d, K, hidden, component_seeds(args.seed)["init"], args.init_scale)


def _train_config(args: argparse.Namespace) -> TrainConfig:
    schedule = Schedule(args.schedule, args.eta, args.drop_every, args.drop_factor, args.eta_min)
    return TrainConfig(args.epochs, args.batch, schedule, component_seeds(args.seed)["shuffle"])


def _rule(args: argparse.Namespace) -> SamplingRule:
    if args.sample_steps <= 0:
        return SamplingRule.all_steps()
    return SamplingRule.uniform_k(args.sample_steps, component_seeds(args.seed)["sampling"])


def cmd_generate(args: argparse.Namespace, manifest: dict) -> None:
    seeds = component_seeds(args.seed)
    ds = generate_blobs(args.classes, args.per_class, args.dim, args.spread, seeds["blobs"], args.separation)
    train, test = split(ds, args.train_fraction, seeds["split"])
    train = inject_label_noise(train, NoiseConfig(args.noise, seeds["noise"]))
    write_dataset(train, args.out, manifest)
    if args.test_out:
        write_dataset(test, args.test_out, manifest)


def _score(args: argparse.Namespace, ds, method: str):
    seeds = component_seeds(args.seed)
    plan = make_partition(ds, args.partitions, seeds["partition"])
    return score_pipeline(ds, _spec(args, ds.d, ds.K), _train_config(args), plan, _rule(args),
                          method, seeds["random"], args.jobs)


def cmd_score(args: argparse.Namespace, manifest: dict) -> None:
    ds = read_dataset(args.data)
    write_scores(_score(args, ds, _method(args.method)), args.out, manifest)


def cmd_prune(args: argparse.Namespace, manifest: dict) -> None:
    check_delta(args.delta)
    ds, scores = read_dataset(args.data), read_scores(args.scores)
    write_coreset(prune(ds, scores, PruneConfig(args.delta, scores.method)), args.out, manifest)


def cmd_eval(args: argparse.Namespace, manifest: dict) -> None:
    train, test = read_dataset(args.train), read_dataset(args.test)
    coreset = read_coreset(args.coreset)
    report = evaluate_coreset(train, coreset, test, _spec(args, train.d, train.K), _train_config(args),
                              args.repeats, args.jobs)
    if args.scores:
        report = replace(report, noise=noise_detection(read_scores(args.scores), train, args.bottom_fraction))
    emit_report(report, args.out, manifest, include_timing=args.timing)


def cmd_compare(args: argparse.Namespace, manifest: dict) -> None:
    train, test = read_dataset(args.train), read_dataset(args.test)
    spec, cfg = _spec(args, train.d, train.K), _train_config(args)
    cells = {}
    for method in args.methods:
        scores = _score(args, train, method)
        for delta in args.deltas:
            try:
                coreset = prune(train, scores, delta)
                cells[(method, delta)] = evaluate_coreset(train, coreset, test, spec, cfg, args.repeats, args.jobs)
            except MosoError as exc:
                logger.warning("%s at delta=%g failed: %s", method, delta, exc)
                cells[(method, delta)] = None
    emit_plot_data(cells, args.out, args.seed, manifest)


def cmd_oracle(args: argparse.Namespace, manifest: dict) -> None:
    ds = read_dataset(args.data)
    if ds.N > args.max_n:
        raise GuardError(f"exact MoSo needs {ds.N} retrainings, O(T*n^2) overall; N={ds.N} exceeds --max-n {args.max_n}")
    spec, cfg, rule = _spec(args, ds.d, ds.K), _train_config(args), _rule(args)
    result = fit(ds, spec, cfg, capture=CaptureRule.all_steps(), track_history=False)
    approx = moso_approx(ds, result.trace, rule)
    exact = moso_exact(ds, spec, cfg, result, max_n=args.max_n, n_jobs=args.jobs)
    probe = approximation_error_probe(ds, spec, cfg, args.budgets, rule, args.max_n, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_scores(exact, out / "exact.scores", manifest)
    write_scores(approx, out / "approx.scores", manifest)
    rho = "null" if exact.is_constant() or approx.is_constant() else format_float(spearman(exact, approx))
    lines = [header_line("agreement"), manifest_line(manifest),
             f"N={ds.N}", f"T={result.trace.T}", f"spearman={rho}"]
    lines += [f"probe_epochs_{int(row.epochs)}=T:{int(row.T)},mean_abs_error:{format_float(row.mean_abs_error)}"
              for row in probe.itertuples()]
    write_lines(out / "agreement.txt", lines)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="Global seed; all component seeds derive from it.")
    parser.add_argument("--jobs", type=int, default=1, help="Parallel jobs for retrains, partitions and repeats.")
    parser.add_argument("--log-level", default=os.environ.get("MOSO_LOG_LEVEL", "WARNING"),
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level (stderr).")


def _add_training(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", choices=MODEL_KINDS, default="logistic")
    parser.add_argument("--hidden", type=int, default=16, help="Hidden width of the mlp.")
    parser.add_argument("--init-scale", type=float, default=0.1)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--schedule", choices=SCHEDULE_KINDS, default="constant")
    parser.add_argument("--eta", type=float, default=0.5)
    parser.add_argument("--eta-min", type=float, default=0.0, help="Final rate of the cosine schedule.")
    parser.add_argument("--drop-every", type=int, default=10, help="Epochs between step-schedule drops.")
    parser.add_argument("--drop-factor", type=float, default=0.1)


def _add_scoring(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--partitions", type=int, default=1, help="Number of non-overlapping subsets.")
    parser.add_argument("--sample-steps", type=int, default=10, help="Sampled time steps; 0 uses every step.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moso", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, func: Callable, summary: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=summary, allow_abbrev=False)
        sub.set_defaults(func=func)
        _add_common(sub)
        return sub

    sub = command("generate", cmd_generate, "Generate a Gaussian-blob train/test pair.")
    sub.add_argument("--classes", type=int, default=2)
    sub.add_argument("--per-class", type=int, default=100)
    sub.add_argument("--dim", type=int, default=2)
    sub.add_argument("--spread", type=float, default=1.0)
    sub.add_argument("--separation", type=float, default=4.0)
    sub.add_argument("--noise", type=float, default=0.0, help="Symmetric label-noise rate of the train split.")
    sub.add_argument("--train-fraction", type=float, default=0.8)
    sub.add_argument("--out", required=True)
    sub.add_argument("--test-out")

    sub = command("score", cmd_score, "Score every training sample.")
    sub.add_argument("--data", required=True)
    sub.add_argument("--method", choices=("moso",) + PIPELINE_METHODS, default="moso")
    _add_training(sub)
    _add_scoring(sub)
    sub.add_argument("--out", required=True)

    sub = command("prune", cmd_prune, "Select a coreset by pruning the lowest scores.")
    sub.add_argument("--data", required=True)
    sub.add_argument("--scores", required=True)
    sub.add_argument("--delta", type=float, required=True)
    sub.add_argument("--out", required=True)

    sub = command("eval", cmd_eval, "Retrain on a coreset and report test accuracy.")
    sub.add_argument("--train", required=True)
    sub.add_argument("--test", required=True)
    sub.add_argument("--coreset", required=True)
    sub.add_argument("--scores", help="Scores behind the coreset, for noise-detection recall.")
    sub.add_argument("--bottom-fraction", type=float, default=0.2)
    sub.add_argument("--repeats", type=int, default=1)
    sub.add_argument("--timing", action="store_true", help="Write per-phase runtimes (not reproducible).")
    _add_training(sub)
    sub.add_argument("--out", required=True)

    sub = command("compare", cmd_compare, "Sweep methods and pruning ratios into an accuracy grid.")
    sub.add_argument("--train", required=True)
    sub.add_argument("--test", required=True)
    sub.add_argument("--methods", type=_methods, default=_methods(DEFAULT_METHODS))
    sub.add_argument("--deltas", type=_floats, default=_floats(DEFAULT_DELTAS))
    sub.add_argument("--repeats", type=int, default=1)
    _add_training(sub)
    _add_scoring(sub)
    sub.add_argument("--out", required=True)

    sub = command("oracle", cmd_oracle, "Compare approximate MoSo against leave-one-out retraining.")
    sub.add_argument("--data", required=True)
    sub.add_argument("--max-n", type=int, default=DEFAULT_MAX_EXACT_N)
    sub.add_argument("--budgets", type=lambda text: [int(v) for v in _floats(text)], default=[5, 50],
                     help="Epoch budgets of the approximation-error probe.")
    _add_training(sub)
    _add_scoring(sub)
    sub.set_defaults(sample_steps=0)
    sub.add_argument("--out", required=True, help="Output directory.")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(format=LOG_FORMAT, level=getattr(logging, args.log_level))
    manifest = RunManifest.from_args(args).to_dict()
    try:
        args.func(args, manifest)
    except GuardError as exc:
        return _fail(exc, EXIT_GUARD)
    except ParseError as exc:
        return _fail(exc, EXIT_PARSE)
    except FileNotFoundError as exc:
        return _fail(exc, EXIT_MISSING_FILE)
    except (MosoError, ValueError, OSError) as exc:
        return _fail(exc, EXIT_RUNTIME)
    return EXIT_OK


def _fail(exc: Exception, code: int) -> int:
    logger.debug("failure", exc_info=exc)
    print(f"moso: error: {exc}", file=sys.stderr)
    return code
