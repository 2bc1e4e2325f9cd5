"""
Command-line entry point: ``rnn-td <subcommand> ...``

Every subcommand that produces files also writes a run manifest next to
its output; ``replay`` re-executes a recorded command line.
"""
import argparse
import math
import sys
import time
from collections import defaultdict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from src import __version__
from src.core.config import (
    CalendarConfig,
    Config,
    EvalConfig,
    IngestConfig,
    TrainConfig,
    config_snapshot,
    load_settings,
    theta_grid,
)
from src.core.constants import EvalConstants, ExitCodes, IngestConstants, ModelConstants
from src.core.exceptions import (
    CheckpointError,
    DataError,
    NumericalError,
    RnnTdError,
    UsageError,
    ValidationError,
)
from src.data.ingest import (
    ingest,
    load_corpus_dir,
    load_split_dir,
    read_corpus,
    save_corpus_dir,
    save_split_dir,
    split,
)
from src.evaluation.metrics import MetricsReport, evaluate, format_table, median_report
from src.evaluation.plotting import write_plot
from src.models.baselines import PP_VARIANTS, mc_fit, pp_fit, pp_to_checkpoint, rmtpp_like, rnn_mark_only
from src.models.checkpoint import save_checkpoint, save_model
from src.models.predictors import load_predictor
from src.simulation.simulator import GeneratorSpec, generate_corpus, write_simulation
from src.training.gradcheck import run_gradcheck
from src.training.trainer import train
from src.utils.helpers import format_hours, read_jsonl, write_jsonl
from src.utils.logger import get_logger, setup_logger
from src.utils.manifest import RunManifest, load_manifest, manifest_path_for

logger = get_logger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting on bad usage."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _shaping(value: str) -> str:
    value = ModelConstants.SHAPING_ALIASES.get(value, value)
    if value not in ModelConstants.SHAPINGS:
        raise argparse.ArgumentTypeError(f"unknown shaping: {value}")
    return value


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="YAML settings file; flags win")
    parser.add_argument("--seed", type=int, default=None, help="Root seed for all randomness")
    parser.add_argument("--threads", type=int, default=Config.THREADS, help="Worker threads (hint only)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ...")
    parser.add_argument("--manifest", type=Path, default=None, help="Manifest path (default: next to --out)")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="rnn-td", description="Marked temporal dynamics with RNN-TD")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    parser.commands = sub.choices

    p = sub.add_parser("ingest", help="Prepare a raw corpus file")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="Output directory")
    p.add_argument("--preset", choices=["memetracker", "dianping"], default="memetracker")
    p.add_argument("--gap-hours", type=float, default=None)
    p.add_argument("--min-length", type=int, default=IngestConstants.MIN_LENGTH)
    p.add_argument("--top-k", type=int, default=IngestConstants.TOP_K)
    p.add_argument("--max-length", type=int, default=IngestConstants.MAX_LENGTH)

    p = sub.add_parser("split", help="Seeded 80/10/10 split of a prepared corpus")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="Defaults to --data")

    p = sub.add_parser("simulate", help="Generate a synthetic corpus")
    p.add_argument("--spec", type=Path, required=True, help="Generator spec (YAML)")
    p.add_argument("--n", type=int, required=True, help="Number of sequences")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="Fit a model on a split corpus")
    p.add_argument("--model", choices=sorted(ModelConstants.AVAILABLE_MODELS), default="rnn-td")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="Checkpoint path")
    p.add_argument("--shaping", type=_shaping, default="constant")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--embed", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--gamma", type=float, default=0.0, help="Lasso weight on total intensity")
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--smoothing", type=float, default=0.01, help="Markov chain additive smoothing")
    p.add_argument("--epoch", default=IngestConstants.DEFAULT_EPOCH, help="Corpus epoch (ISO 8601)")
    p.add_argument("--no-calendar", action="store_true", help="Use the log-gap feature only")

    p = sub.add_parser("eval", help="Score checkpoints on a split")
    p.add_argument("--model", type=Path, nargs="+", required=True, help="One or more checkpoints")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p.add_argument("--mode", choices=list(EvalConstants.MODES) + ["both"], default="free")
    p.add_argument("--theta-grid", default="memetracker", help="Preset name or lo:hi:n")
    p.add_argument("--time-mode", choices=["normalized", "raw"], default="normalized")
    p.add_argument("--k", type=int, nargs="+", default=list(EvalConstants.K_VALUES))
    p.add_argument("--fallback-horizon", type=float, default=EvalConstants.FALLBACK_HORIZON)
    p.add_argument("--out", type=Path, default=None, help="Report records (.jsonl)")

    p = sub.add_parser("predict", help="Top candidates for the next event")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--history", type=Path, required=True, help="One sequence in corpus format")
    p.add_argument("--top", type=int, default=3)
    p.add_argument("--time-mode", choices=["normalized", "raw"], default="normalized")

    p = sub.add_parser("gradcheck", help="Finite-difference check of the BPTT gradients")
    p.add_argument("--shaping", type=_shaping, default="constant")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--head", choices=["mark", "shared", "none"], default="mark")

    p = sub.add_parser("plot", help="Acc@theta curves from eval reports")
    p.add_argument("--reports", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True, help=".pdf or .svg")
    p.add_argument("--mode", choices=list(EvalConstants.MODES), default="free")
    p.add_argument("--title", default="Acc@theta")

    p = sub.add_parser("replay", help="Re-run the command recorded in a manifest")
    p.add_argument("recorded", type=Path, help="Manifest file")
    p.add_argument("--out", type=Path, default=None, help="Redirect the recorded --out")

    for p in sub.choices.values():
        _common(p)
    return parser


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    """Parse twice: settings from --config become defaults, then flags win."""
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = load_settings(args.config)
    if settings:
        sub = parser.commands[args.command]
        known = set(vars(args))
        unknown = sorted(set(settings) - known)
        if unknown:
            raise UsageError(f"unknown settings for {args.command}: {', '.join(unknown)}")
        sub.set_defaults(**settings)
        args = parser.parse_args(argv)
    return args


def _seed(args: argparse.Namespace) -> int:
    return Config.DEFAULT_SEED if args.seed is None else args.seed


# --------------------------------------------------
# Subcommands: each fills in the manifest and returns an exit code
# --------------------------------------------------
def cmd_ingest(args, manifest: RunManifest) -> int:
    gap = args.gap_hours
    if gap is None:
        gap = (
            IngestConstants.DIANPING_GAP_HOURS if args.preset == "dianping"
            else IngestConstants.MEMETRACKER_GAP_HOURS
        )
    config = IngestConfig(gap, args.min_length, args.top_k, args.max_length)
    manifest.config = config_snapshot(config)
    manifest.add_input(args.input)
    sequences, vocabulary = ingest(args.input, config)
    for path in save_corpus_dir(args.out, sequences, vocabulary).values():
        manifest.add_artifact(path)
    print(f"{len(sequences)} sequences, K={vocabulary.K} -> {args.out}")
    return ExitCodes.SUCCESS


def cmd_split(args, manifest: RunManifest) -> int:
    out = args.out or args.data
    manifest.add_input(args.data)
    sequences, vocabulary = load_corpus_dir(args.data)
    parts = split(sequences, _seed(args))
    manifest.seeds["split"] = _seed(args)
    for path in save_split_dir(out, parts, vocabulary).values():
        manifest.add_artifact(path)
    print("train/validation/test sequences: {}/{}/{}".format(*parts.sizes()))
    return ExitCodes.SUCCESS


def cmd_simulate(args, manifest: RunManifest) -> int:
    manifest.add_input(args.spec)
    spec = GeneratorSpec.from_file(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    manifest.seeds["simulate"] = spec.seed
    manifest.config = {"generator": {"kind": spec.kind, "K": spec.K, "horizon": spec.horizon,
                                     "max_events": spec.max_events, "seed": spec.seed}}
    sequences, truth = generate_corpus(spec, args.n)
    for path in write_simulation(args.out, sequences, truth, spec.K).values():
        manifest.add_artifact(path)
    n_trans = sum(s.n_transitions for s in sequences)
    print(f"{len(sequences)} sequences ({truth.resamples} resampled); "
          f"ground-truth NLL {truth.total_nll / max(n_trans, 1):.6f} nats/event -> {args.out}")
    return ExitCodes.SUCCESS


def cmd_train(args, manifest: RunManifest) -> int:
    manifest.add_input(args.data)
    corpus, vocabulary = load_split_dir(args.data)
    K = vocabulary.K
    seed = _seed(args)
    manifest.seeds["train"] = seed
    family = ModelConstants.AVAILABLE_MODELS[args.model]["family"]

    if family == "neural":
        calendar = CalendarConfig(epoch=args.epoch, enabled=not args.no_calendar)
        config = TrainConfig(
            learning_rate=args.learning_rate,
            batch_size=args.batch_size,
            max_epochs=args.max_epochs,
            patience=args.patience,
            gamma=args.gamma,
            seed=seed,
            clip_norm=args.clip_norm,
            threads=args.threads,
            head=ModelConstants.HEAD_FOR_MODEL[args.model],
            shaping=args.shaping,
            hidden=args.hidden,
            embed=args.embed,
        )
        fit: Callable = {"rnn-td": train, "rmtpp": rmtpp_like, "rnn": rnn_mark_only}[args.model]
        params, report = fit(corpus, config, K, calendar)
        manifest.config = config_snapshot(config, calendar)
        save_model(args.out, args.model, params, vocabulary)
        log_path = args.out.with_name(args.out.name + ".train.jsonl")
        write_jsonl(log_path, report.records())
        manifest.add_artifact(log_path)
        print(f"best epoch {report.best_epoch}: validation NLL {report.best_valid_nll!r} nats/event")
    elif family == "markov":
        order = int(args.model[-1])
        model = mc_fit(corpus.train, order, args.smoothing, K)
        manifest.config = {"markov": {"order": order, "smoothing": args.smoothing}}
        save_checkpoint(args.out, model.to_checkpoint(args.model, vocabulary))
        print(f"{args.model}: {len(model.counts)} contexts")
    elif args.model in PP_VARIANTS:
        params = pp_fit(corpus.train, args.model, K)
        manifest.config = {"point_process": {"variant": args.model}}
        save_checkpoint(args.out, pp_to_checkpoint(params, vocabulary))
        print(f"{args.model}: fitted on {len(corpus.train)} sequences")
    manifest.add_artifact(args.out)
    return ExitCodes.SUCCESS


def cmd_eval(args, manifest: RunManifest) -> int:
    config = EvalConfig(
        k_values=tuple(args.k),
        theta_grid=theta_grid(args.theta_grid),
        time_mode=args.time_mode,
        fallback_horizon=args.fallback_horizon,
        threads=args.threads,
    )
    modes = list(EvalConstants.MODES) if args.mode == "both" else [args.mode]
    corpus, vocabulary = load_split_dir(args.data)
    sequences = corpus.parts()[args.split]
    manifest.config = config_snapshot(config)
    manifest.add_input(args.data)

    reports: List[MetricsReport] = []
    groups: Dict[tuple, List[MetricsReport]] = defaultdict(list)
    for path in args.model:
        manifest.add_input(path)
        predictor = load_predictor(path, args.time_mode)
        for mode, report in evaluate(predictor, sequences, modes, config, vocabulary).items():
            report.label = path.stem if len(args.model) > 1 else ""
            reports.append(report)
            groups[(report.model, mode)].append(report)
    for members in groups.values():
        if len(members) > 1:
            reports.append(median_report(members))

    print(format_table(reports))
    if args.out:
        write_jsonl(args.out, [r.to_record() for r in reports])
        manifest.add_artifact(args.out)
    return ExitCodes.SUCCESS


def cmd_predict(args, manifest: RunManifest) -> int:
    predictor = load_predictor(args.model, args.time_mode)
    manifest.add_input(args.model)
    manifest.add_input(args.history)
    histories = read_corpus(args.history, predictor.vocabulary)
    if len(histories) != 1:
        raise DataError(f"history file must hold exactly one sequence, found {len(histories)}")
    history = histories[0]
    if len(history) == 0:
        raise DataError("history is empty")
    if not 1 <= args.top <= predictor.K:
        raise ValidationError(f"--top must lie in [1, {predictor.K}]")
    t_last = float(history.times[-1])
    print("rank\tmark\ttime\tlikelihood")
    for rank, c in enumerate(predictor.candidates(history, args.top), start=1):
        offset = c.expected_time - t_last
        if math.isnan(offset):
            when = "-"
        else:
            when = format_hours(offset) if math.isfinite(offset) else "inf"
        print(f"{rank}\t{predictor.vocabulary.decode(c.mark_id)}\t{when}\t{c.likelihood:.6e}")
    return ExitCodes.SUCCESS


def cmd_gradcheck(args, manifest: RunManifest) -> int:
    seed = _seed(args)
    manifest.seeds["gradcheck"] = seed
    report = run_gradcheck(args.shaping, args.trials, seed, head=args.head)
    passed = report.passed()
    print(f"max relative error {report.max_error:.3e} over {args.trials} trials: {'ok' if passed else 'FAILED'}")
    return ExitCodes.SUCCESS if passed else ExitCodes.NUMERICAL


def cmd_plot(args, manifest: RunManifest) -> int:
    reports = []
    for path in args.reports:
        manifest.add_input(path)
        reports.extend(
            r for r in (MetricsReport.from_record(rec) for rec in read_jsonl(path))
            if r.mode == args.mode
        )
    write_plot(reports, args.out, args.title)
    manifest.add_artifact(args.out)
    return ExitCodes.SUCCESS


def cmd_replay(args, manifest: RunManifest) -> int:
    recorded = load_manifest(args.recorded)
    argv = list(recorded.argv)
    if args.out is not None:
        if "--out" not in argv:
            raise UsageError("recorded command has no --out to redirect")
        argv[argv.index("--out") + 1] = str(args.out)
    logger.info(f"Replaying: rnn-td {' '.join(argv)}")
    return run(argv)


COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "plot": cmd_plot,
    "replay": cmd_replay,
}
# stdout-only commands record a manifest only when --manifest is given
NO_DEFAULT_MANIFEST = {"predict", "gradcheck", "replay"}


def _manifest_target(args) -> Optional[Path]:
    if args.manifest is not None:
        return args.manifest
    if args.command in NO_DEFAULT_MANIFEST:
        return None
    out = getattr(args, "out", None)
    if args.command == "split" and out is None:
        out = args.data
    if out is None:
        return None
    return manifest_path_for(out, args.command)


def run(argv: Sequence[str]) -> int:
    """Execute one command line; return the process exit code."""
    argv = list(argv)
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return ExitCodes.USAGE
    except (DataError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return ExitCodes.USAGE

    setup_logger(log_level=args.log_level)
    manifest = RunManifest(argv=argv, command=args.command)
    started = time.perf_counter()
    try:
        code = COMMANDS[args.command](args, manifest)
    except UsageError as e:
        logger.error(str(e))
        return ExitCodes.USAGE
    except (DataError, CheckpointError, ValidationError) as e:
        logger.error(f"{args.command}: {e}")
        return ExitCodes.DATA
    except NumericalError as e:
        logger.error(f"{args.command}: numerical failure: {e}")
        return ExitCodes.NUMERICAL
    except RnnTdError as e:
        logger.error(f"{args.command}: {e}")
        return ExitCodes.DATA

    target = _manifest_target(args)
    if target is not None and code == ExitCodes.SUCCESS:
        manifest.wall_clock_seconds = time.perf_counter() - started
        manifest.write(target)
        logger.info(f"Run manifest: {target}")
    return code


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
