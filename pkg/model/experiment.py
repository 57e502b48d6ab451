"""
Run orchestration behind the command line: train a model and write its
artifacts, reload it, evaluate it, and repeat that across variants, seeds or
one swept hyperparameter.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ingest.dataset import SessionDataset
from model.diffsbr import DiffSBR
from model.graph import CoGraph, build_graph
from model.trainer import Trainer
from query.ledger import record_report
from query.metrics import DEFAULT_KS, evaluate
from shared.checkpoint import load_tensors, save_tensors
from shared.config import build_config, rng_for, write_config_file
from shared.schemas import EpochLosses, MetricsReport, RunConfig

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "model.dsbr"
CONFIG_FILE = "config.txt"
CURVES_FILE = "curves.csv"
METRICS_FILE = "metrics.json"

SWEEP_PARAMS = ("k", "gamma", "delta")


def training_graph(dataset: SessionDataset) -> CoGraph:
    return build_graph([s.items for s in dataset.train], dataset.vocab.n)


def build_model(dataset: SessionDataset, config: RunConfig) -> DiffSBR:
    return DiffSBR(config, training_graph(dataset), dataset.features.values)


def config_columns(config: Dict) -> Dict:
    """RunConfig fields as CSV columns; variant and seed stay unprefixed."""
    return {f"config.{k}": v for k, v in config.items() if k not in ("variant", "seed")}


def write_curves(losses: Sequence[EpochLosses], config: RunConfig, path) -> Path:
    path = Path(path)
    frame = pd.DataFrame([row.model_dump() for row in losses], columns=list(EpochLosses.model_fields))
    frame.insert(0, "variant", config.variant)
    frame.insert(1, "seed", config.seed)
    for column, value in config_columns(config.model_dump(mode="json")).items():
        frame[column] = value
    frame.to_csv(path, index=False)
    return path


def read_curves(path) -> List[EpochLosses]:
    path = Path(path)
    if not path.exists():
        return []
    frame = pd.read_csv(path)
    fields = list(EpochLosses.model_fields)
    return [EpochLosses(**{k: row[k] for k in fields}) for row in frame.to_dict(orient="records")]


def write_report(report: MetricsReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


@dataclass
class TrainedRun:
    model: DiffSBR
    losses: List[EpochLosses]
    out_dir: Path


def train_run(dataset: SessionDataset, config: RunConfig, out_dir) -> TrainedRun:
    """Train one model and write its checkpoint, config and loss curves."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build_model(dataset, config)
    logger.info(
        f"Training variant={config.variant} seed={config.seed} on {len(dataset.train)} sessions, "
        f"{len(model.trainable_parameters())} trainable tensors"
    )
    losses = Trainer(model, dataset).fit()

    save_tensors(out_dir / CHECKPOINT_FILE, model.state_dict())
    write_config_file(config, out_dir / CONFIG_FILE)
    write_curves(losses, config, out_dir / CURVES_FILE)
    logger.info(f"Wrote checkpoint and curves to {out_dir}")
    return TrainedRun(model, losses, out_dir)


def load_run(dataset: SessionDataset, run_dir, overrides: Optional[Dict] = None) -> TrainedRun:
    """Rebuild a trained model from ``config.txt`` and ``model.dsbr``."""
    run_dir = Path(run_dir)
    config = build_config(run_dir / CONFIG_FILE, overrides)
    model = build_model(dataset, config)
    model.load_state_dict(load_tensors(run_dir / CHECKPOINT_FILE))
    return TrainedRun(model, read_curves(run_dir / CURVES_FILE), run_dir)


def evaluate_run(
    dataset: SessionDataset,
    run: TrainedRun,
    ks: Sequence[int] = DEFAULT_KS,
    ledger_url: Optional[str] = None,
) -> MetricsReport:
    report = evaluate(run.model, dataset.test_pairs(), [s.items for s in dataset.train], ks, run.losses)
    write_report(report, run.out_dir / METRICS_FILE)
    if ledger_url:
        record_report(report, run_name=run.out_dir.as_posix(), url=ledger_url)
    return report


def comparison_row(report: MetricsReport, **extra) -> Dict:
    row = dict(extra, variant=report.variant, seed=report.seed)
    row.update({f"P@{k}": v for k, v in report.p_at.items()})
    row.update({f"MRR@{k}": v for k, v in report.mrr_at.items()})
    row.update(config_columns(report.config))
    return row


def ablate(
    dataset: SessionDataset,
    config: RunConfig,
    variants: Sequence[str],
    seeds: Sequence[int],
    out_dir,
    ledger_url: Optional[str] = None,
) -> pd.DataFrame:
    """One train+evaluate run per (variant, seed); writes ``comparison.csv``."""
    out_dir = Path(out_dir)
    rows = []
    for variant in variants:
        for seed in seeds:
            run_config = RunConfig.model_validate(dict(config.model_dump(), variant=variant, seed=seed))
            run = train_run(dataset, run_config, out_dir / variant / f"seed{seed}")
            rows.append(comparison_row(evaluate_run(dataset, run, ledger_url=ledger_url)))
    frame = pd.DataFrame(rows)
    frame.to_csv(out_dir / "comparison.csv", index=False)
    logger.info(f"Wrote {len(rows)} ablation rows to {out_dir / 'comparison.csv'}")
    return frame


def sweep(
    dataset: SessionDataset,
    config: RunConfig,
    param: str,
    values: Sequence[float],
    seeds: Sequence[int],
    out_dir,
    ledger_url: Optional[str] = None,
) -> pd.DataFrame:
    """Train and evaluate once per (value, seed) of one hyperparameter; writes ``sweep.csv``."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"Invalid sweep parameter '{param}'. Allowed values: {', '.join(SWEEP_PARAMS)}")
    out_dir = Path(out_dir)
    rows = []
    for value in values:
        for seed in seeds:
            # re-validate so a bad value fails like a bad flag
            run_config = RunConfig.model_validate(dict(config.model_dump(), **{param: value, "seed": seed}))
            run = train_run(dataset, run_config, out_dir / f"{param}={value:g}" / f"seed{seed}")
            report = evaluate_run(dataset, run, ledger_url=ledger_url)
            rows.append(comparison_row(report, param=param, value=value))
    frame = pd.DataFrame(rows)
    frame.to_csv(out_dir / "sweep.csv", index=False)
    logger.info(f"Wrote {len(rows)} sweep rows to {out_dir / 'sweep.csv'}")
    return frame


def config_sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".config")


def export_embeddings(run: TrainedRun, path) -> Path:
    state = run.model.state_dict()
    write_config_file(run.model.config, config_sidecar(path))
    return save_tensors(path, {"E_id": state["E_id"], "E_mo": state["E_mo"]})


def export_projection(dataset: SessionDataset, run: TrainedRun, path) -> Path:
    """Test-split session, latent-neighbour and top-k retrieved-neighbour rows."""
    model = run.model
    if not model.flags.retrieval:
        raise ValueError(f"variant {model.flags.name} retrieves no neighbours to project")
    pairs = dataset.test_pairs()
    bank = model.encode_bank([s.items for s in dataset.train])
    rng_eval = rng_for(model.config.seed, "eval")
    targets, latents, observables = [], [], []
    for start in range(0, len(pairs), model.config.batch_size):
        out = model.infer([p.prefix for p in pairs[start : start + model.config.batch_size]], bank, rng_eval)
        targets.append(out.s_id.data)
        latents.append(out.s_n0.data)
        observables.append(out.neighbors.rows.reshape(-1, model.config.dim))
    write_config_file(model.config, config_sidecar(path))
    return save_tensors(
        path,
        {
            "S_target": np.concatenate(targets),
            "S_latent": np.concatenate(latents),
            "S_observable": np.concatenate(observables),
        },
    )


def load_report(path) -> MetricsReport:
    return MetricsReport.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
