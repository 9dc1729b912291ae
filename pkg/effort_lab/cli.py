"""
Command-line entry point: `python -m effort_lab <command> ...`.

Exit codes: 0 success, 1 usage or configuration error, 2 data or
computation error, 3 network error.
"""
import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path
from typing import Optional, Sequence

from effort_lab.datasets import FeatureSchema, load_bundled, load_csv, validation_split
from effort_lab.exceptions import ConfigError, EffortLabError
from effort_lab.github_ingest import CollectionSpec, collect, to_fixture
from effort_lab.harness import METRIC_ORIENTATION, rank_frame, run_experiment, tally
from effort_lab.learners import cart_train
from effort_lab.reporting import format_rank_section, format_tally, read_metrics, rank_table, report_from_directory, write_outputs
from effort_lab.stats import RankConfig
from effort_lab.tuners import CONFIG_FIELDS, DeParams, TuneObjective, de_tune, flash_tune
from effort_lab.utils.error_handler import ErrorCategory, error_handler, setup_logging
from effort_lab.utils.experiment_config import ExperimentConfig
from effort_lab.utils.settings import Settings, safe_settings_export

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NETWORK = 3


class EffortLabParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _date(value: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date (YYYY-MM-DD): {value!r}")


def _positive(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {number}")
    return number


def _add_rank_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--resamples", type=_positive, default=1000, help="bootstrap resamples (default: %(default)s)")
    parser.add_argument("--alpha", type=float, default=0.05, help="bootstrap significance level (default: %(default)s)")
    parser.add_argument("--a12-threshold", type=float, default=0.56,
                        help="smallest A12 effect treated as a difference (default: %(default)s)")


def build_parser() -> EffortLabParser:
    parser = EffortLabParser(prog="effort_lab", description="Software effort estimation experiments.")
    parser.add_argument("--log-level", default=Settings.LOG_LEVEL,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="console log level (default: %(default)s)")
    commands = parser.add_subparsers(dest="command", required=True, metavar="{run,rank,tune,collect,report}")

    run = commands.add_parser("run", help="run an experiment definition file",
                              description="Run every treatment on every dataset of an experiment file.")
    run.add_argument("--config", required=True, type=Path, help="experiment definition (JSON)")
    run.add_argument("--seed", required=True, type=int, help="master seed for splits, learners and tuners")
    run.add_argument("--out", required=True, type=Path, help="output directory")
    run.add_argument("--jobs", type=_positive, default=Settings.JOBS, help="parallel folds (default: %(default)s)")

    rank = commands.add_parser("rank", help="Scott-Knott rank a metrics table",
                               description="Rank treatments per dataset from a metrics CSV.")
    rank.add_argument("metrics_csv", type=Path, help="metrics.csv written by 'run'")
    rank.add_argument("--metric", required=True, choices=sorted(METRIC_ORIENTATION), help="metric to rank on")
    rank.add_argument("--seed", required=True, type=int, help="bootstrap seed")
    rank.add_argument("--out", type=Path, default=None, help="directory for ranks.csv (default: none)")
    _add_rank_flags(rank)

    tune = commands.add_parser("tune", help="tune CART on one dataset",
                               description="Tune CART hyperparameters on one dataset and report the best configuration.")
    source = tune.add_mutually_exclusive_group(required=True)
    source.add_argument("--dataset", help="bundled dataset name")
    source.add_argument("--csv", type=Path, help="dataset CSV (needs --schema)")
    tune.add_argument("--schema", type=Path, default=None, help="schema sidecar for --csv (default: none)")
    tune.add_argument("--tuner", choices=["flash", "de"], default="flash", help="search strategy (default: %(default)s)")
    tune.add_argument("--seed", required=True, type=int, help="seed for the validation split and the tuner")
    tune.add_argument("--out", required=True, type=Path, help="output directory")
    tune.add_argument("--budget", type=_positive, default=200, help="FLASH evaluation budget (default: %(default)s)")
    tune.add_argument("--init", type=_positive, default=20, help="FLASH initial samples (default: %(default)s)")
    tune.add_argument("--pool", type=_positive, default=10_000, help="FLASH candidate pool (default: %(default)s)")
    tune.add_argument("--metric", choices=["mre", "sa"], default="mre", help="tuning objective (default: %(default)s)")

    coll = commands.add_parser("collect", help="collect monthly activity of a repository",
                               description="Collect monthly repository activity into a fixture CSV.")
    coll.add_argument("--repo", required=True, help="owner/name")
    coll.add_argument("--start", required=True, type=_date, help="first day of the range (YYYY-MM-DD)")
    coll.add_argument("--end", required=True, type=_date, help="last day of the range (YYYY-MM-DD)")
    coll.add_argument("--out", required=True, type=Path, help="output directory for <owner__name>.csv")
    coll.add_argument("--cache-dir", type=Path, default=Settings.CACHE_DIR, help="raw page cache (default: %(default)s)")
    coll.add_argument("--token-env", default="GITHUB_TOKEN", help="environment variable holding the token (default: %(default)s)")
    coll.add_argument("--allow-network", action="store_true", help="fetch pages missing from the cache (default: off)")

    report = commands.add_parser("report", help="text report of a results directory",
                                 description="Rebuild the text report from a results directory.")
    report.add_argument("result_dir", type=Path, help="directory written by 'run'")
    report.add_argument("--seed", required=True, type=int, help="bootstrap seed")
    report.add_argument("--out", type=Path, default=None, help="directory for report.txt (default: none)")
    _add_rank_flags(report)
    return parser


def _rank_config(args: argparse.Namespace) -> RankConfig:
    try:
        return RankConfig(resamples=args.resamples, alpha=args.alpha, a12_threshold=args.a12_threshold, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(f"invalid ranking settings: {exc}") from exc


def cmd_run(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    result = run_experiment(
        config.build_datasets(),
        config.build_treatments(),
        config.plan(),
        args.seed,
        jobs=args.jobs,
        skip_inadmissible=config.skip_inadmissible,
        metrics=config.metrics,
    )
    written = write_outputs(result, args.out, config.rank.to_rank_config(args.seed), config.metrics, config.rank.unit)
    errors = error_handler.summary()
    manifest = {
        "config": str(args.config),
        "seed": args.seed,
        "jobs": args.jobs,
        "plan_digests": result.plan_digests,
        "inadmissible": sorted([dataset, treatment] for dataset, treatment in result.inadmissible),
        "settings": safe_settings_export(),
        "status": errors["status"],
        "errors_by_category": errors["error_statistics"]["by_category"],
    }
    (args.out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print((args.out / "report.txt").read_text(encoding="utf-8"))
    logger.info(f"✅ {len(written)} outputs under {args.out}")
    return EXIT_OK


def cmd_rank(args: argparse.Namespace) -> int:
    metrics = read_metrics(args.metrics_csv)
    if args.metric not in set(metrics.metric):
        raise ConfigError(f"{args.metrics_csv.name} has no rows for metric '{args.metric}'", context={"metric": args.metric})
    treatments = list(dict.fromkeys(metrics.treatment))
    datasets = list(dict.fromkeys(metrics.dataset))
    ranks = rank_frame(metrics, args.metric, _rank_config(args), treatments)
    lines = format_rank_section(ranks, args.metric, datasets, treatments)
    lines += [""] + format_tally(tally(ranks.values(), treatments), f"Rank-1 frequency ({args.metric.upper()})")
    print("\n".join(lines))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        rank_table(ranks, args.metric).to_csv(args.out / "ranks.csv", index=False, float_format="%.12g", lineterminator="\n")
    return EXIT_OK


def cmd_tune(args: argparse.Namespace) -> int:
    if args.dataset:
        data = load_bundled(args.dataset)
    else:
        if args.schema is None:
            raise ConfigError("--csv needs --schema")
        data = load_csv(args.csv, FeatureSchema.load(args.schema))
    train, validation = validation_split(data, seed=args.seed)
    objective = TuneObjective(train, validation, args.metric, args.seed)
    if args.tuner == "flash":
        if args.init >= args.budget or args.pool <= args.budget:
            raise ConfigError(f"need init < budget < pool, got {args.init}/{args.budget}/{args.pool}")
        result = flash_tune(objective, args.budget, args.init, args.pool, args.seed)
    else:
        result = de_tune(objective, DeParams(), args.seed)

    args.out.mkdir(parents=True, exist_ok=True)
    result.archive.dump_csv(args.out / "archive.csv")
    best = {name: getattr(result.config, name) for name in CONFIG_FIELDS}
    summary = {"dataset": data.name, "tuner": args.tuner, "seed": args.seed, "score": result.score,
               "evaluations": objective.evaluations, "config": best}
    (args.out / "best_config.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    tree = cart_train(data, result.config, args.seed)
    (args.out / "tree.txt").write_text(tree.to_text() + "\n", encoding="utf-8")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_collect(args: argparse.Namespace) -> int:
    try:
        spec = CollectionSpec(repo=args.repo, start=args.start, end=args.end,
                              token_env=args.token_env, cache_dir=args.cache_dir)
    except ValueError as exc:
        raise ConfigError(f"invalid collection request: {exc}") from exc
    series = collect(spec, allow_network=args.allow_network)
    path = to_fixture(series, args.out / f"{spec.repo_id}.csv")
    print(path)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    text = report_from_directory(args.result_dir, _rank_config(args))
    print(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.txt").write_text(text, encoding="utf-8")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "rank": cmd_rank,
    "tune": cmd_tune,
    "collect": cmd_collect,
    "report": cmd_report,
}


def exit_code_for(error: EffortLabError) -> int:
    if error.category in (ErrorCategory.NETWORK_ERROR, ErrorCategory.AUTHENTICATION_ERROR):
        return EXIT_NETWORK
    if error.category == ErrorCategory.VALIDATION_ERROR:
        return EXIT_USAGE
    return EXIT_DATA


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, Settings.LOG_FILE)
    try:
        return COMMANDS[args.command](args)
    except EffortLabError as exc:
        error_handler.log_error(f"❌ {args.command} failed: {exc}", category=exc.category.value, context=exc.context)
        print(f"effort_lab {args.command}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
