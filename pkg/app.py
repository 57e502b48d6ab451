#!/usr/bin/env python3
"""
Command-line entry point: python app.py <command> [flags]

Every RunConfig field has a kebab-case flag. Values come from --config, then
DSBR_SEED, then flags. Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from pydantic import ValidationError

from ingest.dataset import load_dataset, prepare_dataset, save_dataset
from ingest.stats import stats
from ingest.synth import synth_dataset
from model import experiment
from model.graph import write_graph_tsv
from query.ledger import record_report, summarize
from query.sknn import sknn_baseline
from shared.config import build_config, write_config_file
from shared.database import get_database_url
from shared.schemas import VARIANTS, RunConfig, StatsReport

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

STATS_FILE = "stats.json"


class UsageError(Exception):
    pass


# ------------------------
# Argument parsing
# ------------------------


def parse_int_list(value: str) -> List[int]:
    """``"1..5"`` (inclusive range) or ``"1,3,7"``."""
    try:
        if ".." in value:
            lo, hi = value.split("..", 1)
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like 1..5 or a list like 1,2,3, got {value!r}")


def parse_float_list(value: str) -> List[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {value!r}")


def parse_name_list(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration")
    group.add_argument("--config", help="key=value config file")
    for name, info in RunConfig.model_fields.items():
        flag = "--" + name.replace("_", "-")
        if info.annotation is bool:
            group.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None)
        else:
            group.add_argument(flag, dest=name, type=info.annotation, default=None, help=info.description)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.py", description="Diffusion-augmented session recommender")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str, data: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", required=True, help="output directory")
        if data:
            p.add_argument("--data", required=True, help="dataset directory written by prepare or synth")
        add_config_flags(p)
        return p

    p = command("prepare", "filter and split a session log into a dataset directory", data=False)
    p.add_argument("--sessions", required=True, help="TSV: session_id, item_id, timestamp")
    p.add_argument("--features", help="DSFT feature file with a sibling .ids manifest")

    p = command("synth", "generate a planted-cluster dataset directory", data=False)
    p.add_argument("--n-clusters", type=int, default=8)
    p.add_argument("--items-per-cluster", type=int, default=25)
    p.add_argument("--n-sessions", type=int, default=2000)
    p.add_argument("--session-len", type=int, default=4)
    p.add_argument("--leak-prob", type=float, default=0.1)

    command("train", "train one model; writes model.dsbr, config.txt, curves.csv")

    p = command("evaluate", "evaluate a trained run or a baseline; writes metrics.json")
    p.add_argument("--run", help="training output directory (defaults to --out)")
    p.add_argument("--baseline", choices=["sknn"], help="evaluate a baseline instead of a trained model")
    p.add_argument("--ks", type=parse_int_list, default=[10, 20])

    p = command("ablate", "train and evaluate several variants over several seeds")
    p.add_argument("--variants", type=parse_name_list, default=list(VARIANTS[:4]))
    p.add_argument("--seeds", type=parse_int_list, default=[1, 2, 3, 4, 5])

    p = command("sweep", "train and evaluate over values of one hyperparameter")
    p.add_argument("--param", required=True, choices=list(experiment.SWEEP_PARAMS))
    p.add_argument("--values", required=True, type=parse_float_list)
    p.add_argument("--seeds", type=parse_int_list, default=[0])

    p = command("export", "dump embeddings, projection tensors or the item graph")
    p.add_argument("--run", help="training output directory (defaults to --out)")
    p.add_argument("--projection", action="store_true", help="also write projection.dsbr")
    p.add_argument("--graph", action="store_true", help="also write graph.tsv")

    command("stats", "print and write dataset statistics")

    p = command("report", "aggregate the run ledger", data=False)
    p.add_argument("--variants", type=parse_name_list)
    p.add_argument("--metrics", type=parse_name_list)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {name: getattr(args, name, None) for name in RunConfig.model_fields}
    return build_config(args.config, overrides)


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {name: v for name in RunConfig.model_fields if (v := getattr(args, name, None)) is not None}


# ------------------------
# Commands
# ------------------------


def write_stats(report: StatsReport, directory: Path, config: RunConfig, **extra: Any) -> Path:
    # extra holds generator flags that sit outside RunConfig
    report = report.model_copy(
        update={"seed": config.seed, "config": dict(config.model_dump(mode="json"), **extra)}
    )
    path = directory / STATS_FILE
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def cmd_prepare(args: argparse.Namespace, out: Path) -> None:
    config = config_from_args(args)
    dataset = prepare_dataset(
        args.sessions, args.features, config.dim, config.min_item_count, config.test_fraction
    )
    save_dataset(dataset, out)
    report = stats(dataset)
    write_stats(report, out, config)
    logger.info(f"Prepared {report.sessions} sessions over {report.items} items into {out}")


def cmd_synth(args: argparse.Namespace, out: Path) -> None:
    config = config_from_args(args)
    dataset = synth_dataset(
        n_clusters=args.n_clusters,
        items_per_cluster=args.items_per_cluster,
        n_sessions=args.n_sessions,
        session_len=args.session_len,
        leak_prob=args.leak_prob,
        seed=config.seed,
        feature_dim=config.dim,
        test_fraction=config.test_fraction,
    )
    save_dataset(dataset, out)
    write_stats(
        stats(dataset),
        out,
        config,
        n_clusters=args.n_clusters,
        items_per_cluster=args.items_per_cluster,
        n_sessions=args.n_sessions,
        session_len=args.session_len,
        leak_prob=args.leak_prob,
    )


def cmd_train(args: argparse.Namespace, out: Path) -> None:
    experiment.train_run(load_dataset(args.data), config_from_args(args), out)


def cmd_evaluate(args: argparse.Namespace, out: Path) -> None:
    dataset = load_dataset(args.data)
    ledger = get_database_url(out)
    if args.baseline == "sknn":
        config = config_from_args(args)
        report = sknn_baseline(
            [s.items for s in dataset.train],
            dataset.test_pairs(),
            dataset.vocab.n,
            config.k_nn,
            args.ks,
            seed=config.seed,
            config=config.model_dump(mode="json"),
        )
        experiment.write_report(report, out / experiment.METRICS_FILE)
        record_report(report, run_name=f"{out.as_posix()}/sknn", url=ledger)
        return

    run = experiment.load_run(dataset, Path(args.run or out), flag_overrides(args))
    run.out_dir = out
    experiment.evaluate_run(dataset, run, args.ks, ledger_url=ledger)


def cmd_ablate(args: argparse.Namespace, out: Path) -> None:
    unknown = [v for v in args.variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"Unknown variant(s) {', '.join(unknown)}. Allowed values: {', '.join(VARIANTS)}")
    experiment.ablate(
        load_dataset(args.data), config_from_args(args), args.variants, args.seeds, out, get_database_url(out)
    )


def cmd_sweep(args: argparse.Namespace, out: Path) -> None:
    experiment.sweep(
        load_dataset(args.data),
        config_from_args(args),
        args.param,
        args.values,
        args.seeds,
        out,
        get_database_url(out),
    )


def cmd_export(args: argparse.Namespace, out: Path) -> None:
    dataset = load_dataset(args.data)
    run = experiment.load_run(dataset, Path(args.run or out), flag_overrides(args))
    if args.graph:
        write_graph_tsv(experiment.training_graph(dataset), out / "graph.tsv", dataset.vocab.ids)
        write_config_file(run.model.config, experiment.config_sidecar(out / "graph.tsv"))
        logger.info(f"Wrote item graph to {out / 'graph.tsv'}")
    experiment.export_embeddings(run, out / "embeddings.dsbr")
    if args.projection:
        experiment.export_projection(dataset, run, out / "projection.dsbr")
    logger.info(f"Exported embeddings to {out}")


def cmd_stats(args: argparse.Namespace, out: Path) -> None:
    report = stats(load_dataset(args.data))
    path = write_stats(report, out, config_from_args(args))
    print(path.read_text(encoding="utf-8"), end="")


def cmd_report(args: argparse.Namespace, out: Path) -> None:
    rows = summarize(get_database_url(out), args.variants, args.metrics)
    frame = pd.DataFrame(rows, columns=["variant", "metric", "runs", "min", "max", "avg"])
    frame.to_csv(out / "report.csv", index=False)
    print(frame.to_string(index=False) if rows else "run ledger is empty")


COMMANDS = {
    "prepare": cmd_prepare,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "export": cmd_export,
    "stats": cmd_stats,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out)
    except (ValidationError, UsageError) as e:
        logger.error(f"Invalid configuration: {e}")
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
