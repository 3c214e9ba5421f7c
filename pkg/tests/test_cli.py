import csv
import json

import numpy as np
import pytest

from dualhsic.cli import main, split_values
from dualhsic.results import read_records

CONFIG = """
seeds = [0]
[train]
epochs = 1
[model]
hidden_dims = [8, 8]
[data]
num_tasks = 2
samples_per_class = 30
dim = 5
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(CONFIG)
    return p


def test_run_writes_results_and_checkpoint(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(config), "--out", str(out), "--seed", "3"]) == 0
    recs = read_records(out / "tiny.jsonl")
    assert recs[0]["seeds"] == [3]
    assert (out / "tiny.seed3.ckpt.npz").exists()
    assert main(["validate", str(out / "tiny.jsonl")]) == 0
    assert "A_T" in capsys.readouterr().out


def test_output_dir_from_environment(config, tmp_path, monkeypatch):
    monkeypatch.setenv("DUALHSIC_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["run", str(config), "--no-checkpoint"]) == 0
    assert (tmp_path / "env" / "tiny.jsonl").exists()
    assert not list((tmp_path / "env").glob("*.npz"))


def test_input_errors_exit_2(config, tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.toml")]) == 2
    assert "missing.toml" in capsys.readouterr().err
    assert main(["run", str(config), "--override", "train.bogus=1", "--out", str(tmp_path)]) == 2
    assert main(["sweep", str(config), "--axis", "train.lr", "--values", "", "--out", str(tmp_path)]) == 2
    assert main(["sweep", str(config), "--axis", "train.nope", "--values", "1", "--out", str(tmp_path)]) == 2
    assert main(["export-embeddings", str(tmp_path / "none.npz"), str(config), str(tmp_path / "e.csv")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_3(config, tmp_path, capsys):
    code = main(["run", str(config), "--override", "train.lr=1e200", "--out", str(tmp_path)])
    assert code == 3
    assert "diverged" in capsys.readouterr().err


def test_sweep(config, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", str(config), "--axis", "dualhsic.lambda_ha", "--values=-0.75,0.75", "--out", str(out)]) == 0
    with open(out / "tiny.sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["dualhsic.lambda_ha"]) for r in rows] == [-0.75, 0.75]
    sweep = json.loads((out / "tiny.sweep.json").read_text())
    assert sweep["axis"] == "dualhsic.lambda_ha" and sweep["config"]["seeds"] == [0]
    best = max(sweep["rows"], key=lambda r: r["average_accuracy_mean"])
    assert sweep["best_value"] == best["value"]
    for r in sweep["rows"]:
        assert read_records(r["results"])[-1]["type"] == "footer"


def test_split_values():
    assert split_values("1,2.5, both") == [1, 2.5, "both"]
    assert split_values("[1,2],[3]") == [[1, 2], [3]]
    assert split_values(" ") == []


def test_export_embeddings(config, tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(config), "--out", str(out)]) == 0
    rng = np.random.default_rng(0)
    data = tmp_path / "d.csv"
    with open(data, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(5)] + ["label"])
        for i in range(6):
            w.writerow(list(rng.normal(size=5)) + [i % 4])
    emb = tmp_path / "emb.csv"
    assert main(["export-embeddings", str(out / "tiny.seed0.ckpt.npz"), str(data), str(emb)]) == 0
    with open(emb) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == [f"z_{i}" for i in range(1, 9)] + ["label", "task_id"]
    assert [int(r["task_id"]) for r in rows] == [0, 0, 1, 1, 0, 0]
    assert all(float(r["z_1"]) >= 0 for r in rows)  # relu features

    wrong = tmp_path / "w.csv"
    wrong.write_text("a,label\n1,0\n")
    assert main(["export-embeddings", str(out / "tiny.seed0.ckpt.npz"), str(wrong), str(emb)]) == 2
