"""End-to-end command-line checks through real subprocesses."""

import json
import os
import subprocess
import sys

import yaml


def run_cli(*argv, cwd=None):
    env = dict(os.environ)
    return subprocess.run([sys.executable, "-m", "riemres.cli", *argv],
                          capture_output=True, text=True, cwd=cwd, env=env)


def test_gen_data_sir(tmp_path):
    out = str(tmp_path / "sir")
    res = run_cli("gen-data", "sir", "--out", out, "--nodes", "63",
                  "--infection-prob", "0.7", "--seed", "1")
    assert res.returncode == 0, res.stderr
    assert "63 nodes" in res.stdout
    assert os.path.exists(os.path.join(out, "edges.txt"))
    assert os.path.exists(os.path.join(out, "features.csv"))
    assert os.path.exists(os.path.join(out, "labels.csv"))
    assert os.path.exists(os.path.join(out, "meta.json"))


def test_gen_data_spd(tmp_path):
    out = str(tmp_path / "spd")
    res = run_cli("gen-data", "spd", "--out", out, "--samples", "10",
                  "--dim", "4", "--frames", "20")
    assert res.returncode == 0, res.stderr
    assert "10 matrices" in res.stdout
    assert os.path.exists(os.path.join(out, "matrix_00000.txt"))
    assert os.path.exists(os.path.join(out, "labels.csv"))


def test_train_and_evaluate_round_trip(tmp_path):
    data_dir = str(tmp_path / "sir")
    res = run_cli("gen-data", "sir", "--out", data_dir, "--nodes", "120",
                  "--infection-prob", "0.7", "--seed", "0")
    assert res.returncode == 0, res.stderr

    config = {
        "task": "nc",
        "seed": 0,
        "dataset": {"kind": "dir", "path": data_dir,
                    "split": [0.6, 0.2, 0.2]},
        "manifold": {"kind": "poincare", "dim": 2},
        "model": {"depth": 1, "field": "feature", "num_features": 4},
        "optimizer": {"lr": 0.02, "epochs": 5, "grad_clip": 5.0},
    }
    cfg_path = tmp_path / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(config))
    run_dir = str(tmp_path / "run")
    res = run_cli("train", "--config", str(cfg_path), "--output-dir", run_dir)
    assert res.returncode == 0, res.stderr
    assert "config hash:" in res.stdout
    assert "final test_f1:" in res.stdout
    ckpt = os.path.join(run_dir, "checkpoint.json")
    assert os.path.exists(ckpt)
    assert os.path.exists(os.path.join(run_dir, "metrics.csv"))
    with open(os.path.join(run_dir, "report.json")) as fh:
        report = json.load(fh)
    assert len(report["epochs"]) == 5

    res = run_cli("evaluate", "--checkpoint", ckpt, "--data", data_dir)
    assert res.returncode == 0, res.stderr
    assert res.stdout.startswith("f1:")
    # evaluation reproduces the final training-run test metric exactly
    final_f1 = report["final"]["test_f1"]
    assert float(res.stdout.split(":")[1]) == final_f1


def test_seed_override_changes_the_run(tmp_path):
    config = {
        "task": "nc",
        "dataset": {"kind": "blobs", "n_nodes": 60, "dim": 2},
        "manifold": {"kind": "euclidean", "dim": 2},
        "model": {"depth": 1, "field": "embedded"},
        "optimizer": {"lr": 0.05, "epochs": 3},
    }
    cfg_path = tmp_path / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(config))
    hashes = []
    for seed in ("0", "1"):
        res = run_cli("train", "--config", str(cfg_path),
                      "--output-dir", str(tmp_path / f"run{seed}"),
                      "--seed", seed)
        assert res.returncode == 0, res.stderr
        hashes.append(res.stdout.splitlines()[0])
    assert hashes[0] != hashes[1]


def test_diagnose_delta_on_a_tree(tmp_path):
    data_dir = str(tmp_path / "tree")
    res = run_cli("gen-data", "sir", "--out", data_dir, "--nodes", "31")
    assert res.returncode == 0, res.stderr
    res = run_cli("diagnose", "delta", "--data", data_dir)
    assert res.returncode == 0, res.stderr
    assert res.stdout.strip() == "gromov delta: 0.0"


def test_bad_config_exits_nonzero(tmp_path):
    cfg_path = tmp_path / "bad.yaml"
    cfg_path.write_text(yaml.safe_dump({"task": "regression"}))
    res = run_cli("train", "--config", str(cfg_path),
                  "--output-dir", str(tmp_path / "run"))
    assert res.returncode == 1
    assert res.stderr.startswith("error:")


def test_unknown_config_key_exits_nonzero(tmp_path):
    cfg_path = tmp_path / "bad.yaml"
    cfg_path.write_text(yaml.safe_dump({"optimiser": {"lr": 0.1}}))
    res = run_cli("train", "--config", str(cfg_path),
                  "--output-dir", str(tmp_path / "run"))
    assert res.returncode == 1
    assert "optimiser" in res.stderr
