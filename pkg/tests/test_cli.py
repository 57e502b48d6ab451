import json

import pandas as pd
import pytest

import app
from ingest.dataset import load_dataset
from shared.checkpoint import load_tensors

SYNTH = ["--n-clusters", "3", "--items-per-cluster", "6", "--n-sessions", "120", "--session-len", "4"]
# fmt: off
SMALL = [
    "--epochs", "1", "--dim", "8", "--layers", "1", "--steps", "4", "--reverse-steps", "2",
    "--k", "2", "--pool-size", "32", "--batch-size", "64",
]
# fmt: on


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert app.main(["synth", "--out", str(out), "--dim", "8", "--seed", "1", *SYNTH]) == app.EXIT_OK
    return out


@pytest.fixture(scope="module")
def run_dir(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert app.main(["train", "--data", str(data_dir), "--out", str(out), *SMALL]) == app.EXIT_OK
    return out


# ------------------------
# Parsing
# ------------------------


@pytest.mark.parametrize(
    "value, expected",
    [("1..5", [1, 2, 3, 4, 5]), ("3", [3]), ("1,4,9", [1, 4, 9])],
)
def test_parse_int_list(value, expected):
    assert app.parse_int_list(value) == expected


def test_help_exits_cleanly():
    assert app.main(["--help"]) == app.EXIT_OK


def test_unknown_command_is_a_usage_error():
    assert app.main(["fly"]) == app.EXIT_USAGE


def test_missing_required_flag_is_a_usage_error(tmp_path):
    assert app.main(["train", "--out", str(tmp_path)]) == app.EXIT_USAGE


# ------------------------
# Data commands
# ------------------------


def test_synth_is_reproducible(data_dir, tmp_path):
    assert app.main(["synth", "--out", str(tmp_path), "--dim", "8", "--seed", "1", *SYNTH]) == app.EXIT_OK
    for name in ("train.tsv", "test.tsv", "items.txt", "features.bin", "dataset.json"):
        assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes()


def test_stats_command(data_dir, tmp_path):
    assert app.main(["stats", "--data", str(data_dir), "--out", str(tmp_path), "--seed", "4"]) == app.EXIT_OK
    report = json.loads((tmp_path / "stats.json").read_text())
    dataset = load_dataset(data_dir)
    assert report["items"] == dataset.vocab.n
    assert report["sessions"] == len(dataset.sessions)
    assert report["seed"] == 4
    assert report["config"]["seed"] == 4


def test_synth_stats_record_generator_settings(data_dir):
    report = json.loads((data_dir / "stats.json").read_text())
    assert report["seed"] == 1
    assert report["config"]["dim"] == 8
    assert report["config"]["n_clusters"] == 3
    assert report["config"]["n_sessions"] == 120


def test_prepare_from_session_log(tmp_path):
    log = tmp_path / "log.tsv"
    rows = [f"s{s}\t{item}\t{s * 10 + i}" for s in range(12) for i, item in enumerate(["a", "b", "c"])]
    log.write_text("\n".join(rows) + "\n")
    out = tmp_path / "prepared"
    argv = ["prepare", "--sessions", str(log), "--out", str(out), "--dim", "4", "--min-item-count", "2"]
    assert app.main(argv) == app.EXIT_OK
    dataset = load_dataset(out)
    assert dataset.vocab.n == 3
    assert dataset.features.zero_filled.all()


def test_missing_dataset_is_a_runtime_failure(tmp_path):
    assert app.main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == app.EXIT_FAILURE


def test_bad_variant_is_a_usage_error(data_dir, tmp_path):
    argv = ["train", "--data", str(data_dir), "--out", str(tmp_path), "--variant", "no-XYZ"]
    assert app.main(argv) == app.EXIT_USAGE


# ------------------------
# Model commands
# ------------------------


def test_train_writes_artifacts(run_dir):
    for name in ("model.dsbr", "config.txt", "curves.csv"):
        assert (run_dir / name).exists()
    curves = pd.read_csv(run_dir / "curves.csv")
    assert curves["epoch"].tolist() == [1]
    assert "dim=8" in (run_dir / "config.txt").read_text().splitlines()
    assert curves["variant"].tolist() == ["full"]
    assert curves["config.dim"].tolist() == [8]
    assert curves["config.epochs"].tolist() == [1]


def test_evaluate_is_byte_identical(data_dir, run_dir, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        argv = ["evaluate", "--data", str(data_dir), "--run", str(run_dir), "--out", str(out)]
        assert app.main(argv) == app.EXIT_OK
    assert (first / "metrics.json").read_bytes() == (second / "metrics.json").read_bytes()

    report = json.loads((first / "metrics.json").read_text())
    assert report["variant"] == "full" and report["epochs"] == 1
    assert set(report["p_at"]) == {"10", "20"}
    assert all(0.0 <= v <= 100.0 for v in report["p_at"].values())
    assert report["config"]["dim"] == 8


def test_independent_runs_give_identical_metrics(data_dir, tmp_path):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert app.main(["train", "--data", str(data_dir), "--out", str(out), *SMALL]) == app.EXIT_OK
        assert app.main(["evaluate", "--data", str(data_dir), "--out", str(out), *SMALL]) == app.EXIT_OK
        outputs.append((out / "metrics.json").read_bytes())
    assert outputs[0] == outputs[1]


def test_sknn_baseline_command(data_dir, tmp_path):
    argv = ["evaluate", "--data", str(data_dir), "--out", str(tmp_path), "--baseline", "sknn", "--ks", "5,10"]
    assert app.main(argv) == app.EXIT_OK
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert report["variant"] == "sknn"
    assert set(report["mrr_at"]) == {"5", "10"}


def test_export_command(data_dir, run_dir, tmp_path):
    argv = ["export", "--data", str(data_dir), "--run", str(run_dir), "--out", str(tmp_path)]
    argv += ["--projection", "--graph"]
    assert app.main(argv) == app.EXIT_OK
    n = load_dataset(data_dir).vocab.n
    embeddings = load_tensors(tmp_path / "embeddings.dsbr")
    assert embeddings["E_id"].shape == embeddings["E_mo"].shape == (n, 8)
    projection = load_tensors(tmp_path / "projection.dsbr")
    assert projection["S_observable"].shape[0] == 2 * projection["S_target"].shape[0]
    assert projection["S_latent"].shape == projection["S_target"].shape
    assert (tmp_path / "graph.tsv").exists()
    for name in ("embeddings.dsbr", "projection.dsbr", "graph.tsv"):
        lines = (tmp_path / f"{name}.config").read_text().splitlines()
        assert "dim=8" in lines and "seed=0" in lines


def test_ablate_and_report(data_dir, tmp_path):
    argv = ["ablate", "--data", str(data_dir), "--out", str(tmp_path)]
    argv += ["--variants", "full,no-RAD", "--seeds", "1..2"]
    assert app.main([*argv, *SMALL]) == app.EXIT_OK
    frame = pd.read_csv(tmp_path / "comparison.csv")
    assert len(frame) == 4
    assert sorted(zip(frame["variant"], frame["seed"])) == [("full", 1), ("full", 2), ("no-RAD", 1), ("no-RAD", 2)]
    assert (tmp_path / "no-RAD" / "seed2" / "metrics.json").exists()
    assert frame["config.dim"].tolist() == [8] * 4
    assert frame["config.epochs"].tolist() == [1] * 4

    assert app.main(["report", "--out", str(tmp_path), "--metrics", "P@10"]) == app.EXIT_OK
    report = pd.read_csv(tmp_path / "report.csv")
    assert report["runs"].tolist() == [2, 2]


def test_ablate_rejects_unknown_variant(data_dir, tmp_path):
    argv = ["ablate", "--data", str(data_dir), "--out", str(tmp_path), "--variants", "full,no-XYZ"]
    assert app.main(argv) == app.EXIT_USAGE


def test_sweep_command(data_dir, tmp_path):
    argv = ["sweep", "--data", str(data_dir), "--out", str(tmp_path), "--param", "gamma", "--values", "0.5,2"]
    assert app.main([*argv, *SMALL]) == app.EXIT_OK
    frame = pd.read_csv(tmp_path / "sweep.csv")
    assert frame["value"].tolist() == [0.5, 2.0]
    assert frame["config.gamma"].tolist() == [0.5, 2.0]
    assert (tmp_path / "gamma=0.5" / "seed0" / "model.dsbr").exists()
