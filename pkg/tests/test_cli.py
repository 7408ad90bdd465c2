import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from specformer.cli import main

FIXTURES = Path(__file__).parent / "fixtures"


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_eig_grid_has_zero_eigenvalue(tmp_path, capsys):
    assert main(["eig", "--grid", "2x2", "--out", str(tmp_path)]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    values = [float(v) for v in line.split(",")]
    assert abs(values[0]) <= 1e-10
    rows = read_rows(tmp_path / "eigenvalues.csv")
    assert [float(r["lambda"]) for r in rows] == values


def test_eig_dataset_with_vectors(tmp_path):
    assert main(["eig", "--data", str(FIXTURES / "toy3"), "--vectors", "--out", str(tmp_path)]) == 0
    u = np.loadtxt(tmp_path / "eigenvectors.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-12)


def test_eig_requires_exactly_one_source(tmp_path, capsys):
    assert main(["eig", "--out", str(tmp_path)]) == 2
    assert "usage" in capsys.readouterr().err


def test_invalid_filter_exits_2_with_usage(capsys):
    assert main(["synth", "--filter", "notch"]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"filter": "lowpass", "learning_rate": 0.1}))
    assert main(["synth", "--config", str(cfg)]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_unknown_model_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"depth": 3}}))
    assert main(["synth", "--config", str(cfg)]) == 2
    assert "depth" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["synth", "--config", str(tmp_path / "nope.json")]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_synth_small_run_writes_all_files(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid": "5x5", "images": 3, "model": {"d": 4}, "train": {"max_epochs": 5, "patience": 5}}))
    out = tmp_path / "run"
    assert main(["synth", "--config", str(cfg), "--filter", "comb", "--seed", "1", "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    for key in ("final_sse", "r2", "test_accuracy", "seconds", "param_count"):
        assert key in metrics
    assert metrics["filter"] == "comb" and metrics["epochs"] == 5
    rows = read_rows(out / "learned_filter.csv")
    assert list(rows[0]) == ["lambda", "g_true", "g_learned"]
    lam = np.array([float(r["lambda"]) for r in rows])
    np.testing.assert_array_equal([float(r["g_true"]) for r in rows], np.abs(np.sin(np.pi * lam)))
    loss = read_rows(out / "loss.csv")
    assert len(loss) == 5 and list(loss[0]) == ["epoch", "train_loss", "val_loss"]
    assert (out / "attention_condensed.csv").read_text().startswith("band,low,medium,high,count")


def test_synth_rerun_is_bitwise_identical(tmp_path):
    args = ["synth", "--grid", "4", "--images", "2", "--seed", "3"]
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"d": 4}, "train": {"max_epochs": 8, "patience": 8}}))
    for name in ("a", "b"):
        assert main(args + ["--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()
    assert (tmp_path / "a" / "learned_filter.csv").read_bytes() == (tmp_path / "b" / "learned_filter.csv").read_bytes()


def quick_nodecls(tmp_path, extra):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"d": 4, "heads": 1}, "train": {"max_epochs": 5, "patience": 5}}))
    return main(["nodecls", "--config", str(cfg), "--out", str(tmp_path / "nc")] + extra)


def test_nodecls_sbm_summary(tmp_path):
    assert quick_nodecls(tmp_path, ["--sbm", "--runs", "3"]) == 0
    summary = json.loads((tmp_path / "nc" / "nodecls_summary.json").read_text())
    accs = np.array([r["test_accuracy"] for r in summary["runs"]])
    assert len(accs) == 3
    assert summary["mean"] == pytest.approx(accs.mean())
    assert summary["ci95"] == pytest.approx(1.96 * accs.std(ddof=1) / np.sqrt(3))


def test_nodecls_truncation(tmp_path):
    assert quick_nodecls(tmp_path, ["--sbm", "--runs", "1", "--truncate", "smallest:50,largest:0"]) == 0
    assert json.loads((tmp_path / "nc" / "nodecls_summary.json").read_text())["q"] == 50


def test_nodecls_parallel_matches_sequential(tmp_path):
    (tmp_path / "s").mkdir()
    (tmp_path / "p").mkdir()
    assert quick_nodecls(tmp_path / "s", ["--sbm", "--runs", "2"]) == 0
    assert quick_nodecls(tmp_path / "p", ["--sbm", "--runs", "2", "--parallel", "2"]) == 0
    seq = json.loads((tmp_path / "s" / "nc" / "nodecls_summary.json").read_text())["runs"]
    par = json.loads((tmp_path / "p" / "nc" / "nodecls_summary.json").read_text())["runs"]
    assert [r["test_accuracy"] for r in seq] == [r["test_accuracy"] for r in par]


def test_nodecls_missing_labels(tmp_path, capsys):
    data = tmp_path / "data"
    shutil.copytree(FIXTURES / "toy3", data)
    (data / "labels.txt").unlink()
    assert quick_nodecls(tmp_path, ["--data", str(data)]) == 2
    assert "labels.txt" in capsys.readouterr().err


def test_nodecls_bad_truncate(tmp_path):
    assert quick_nodecls(tmp_path, ["--sbm", "--truncate", "lowest:3"]) == 2


def test_gradcheck_ops(capsys):
    assert main(["gradcheck", "--seed", "0", "--ops-only"]) == 0
    out = capsys.readouterr().out
    assert "matmul" in out and "FAIL" not in out


def test_attn_condense_identity_fixture(tmp_path, capsys):
    args = ["attn-condense", "--attention", str(FIXTURES / "attention" / "identity.csv"),
            "--lambdas", str(FIXTURES / "attention" / "lambdas.csv"), "--out", str(tmp_path)]
    assert main(args) == 0
    rows = read_rows(tmp_path / "attention_condensed.csv")
    matrix = np.array([[float(r[b]) for b in ("low", "medium", "high")] for r in rows])
    np.testing.assert_array_equal(matrix, np.eye(3))
    assert capsys.readouterr().out.startswith("band,")


def test_attn_condense_missing_file(tmp_path, capsys):
    assert main(["attn-condense", "--attention", str(tmp_path / "b.csv"), "--lambdas", "x.csv"]) == 2
    assert "b.csv" in capsys.readouterr().err
