import json

import pytest

from p3a.harness.cli import main

TRAIN_CONFIG = {
    "dataset": {"kind": "blobs", "classes": 2, "dim": 9, "separation": 6.0,
                "n": 30, "split": 0.7},
    "arch": {"hidden": [5], "activation": "relu"},
    "epochs": 4, "lr": 0.2, "seed": 8, "out": "victim.json",
}

ATTACK_CONFIG = {
    "name": "cli_demo", "seed": 5, "samples": 4,
    "dataset": {"kind": "blobs", "classes": 2, "dim": 9, "separation": 6.0,
                "n": 30, "seed": 5, "split": 0.5},
    "train": {"arch": {"hidden": [5]}, "epochs": 4, "lr": 0.2},
    "attacks": [{"strategy": "bim", "eps": 0.1, "step_size": 0.03, "iterations": 2}],
    "p3a": {"alpha_lr": 0.001},
}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def test_train_twice_byte_identical(tmp_path):
    cfg = write_json(tmp_path / "train.json", TRAIN_CONFIG)
    assert main(["train", "--config", cfg, "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["train", "--config", cfg, "--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/victim.json").read_bytes() == (tmp_path / "b/victim.json").read_bytes()


def test_attack_end_to_end(tmp_path):
    cfg = write_json(tmp_path / "exp.json", ATTACK_CONFIG)
    assert main(["attack", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "cli_demo.csv").exists()
    assert (tmp_path / "cli_demo.json").exists()


def test_attack_with_model_file(tmp_path):
    train_cfg = dict(TRAIN_CONFIG)
    train_cfg["dataset"] = dict(TRAIN_CONFIG["dataset"], seed=5)
    write_json(tmp_path / "train.json", train_cfg)
    assert main(["train", "--config", str(tmp_path / "train.json"),
                 "--out-dir", str(tmp_path)]) == 0
    attack_cfg = dict(ATTACK_CONFIG, model="victim.json")
    attack_cfg.pop("train")
    cfg = write_json(tmp_path / "exp.json", attack_cfg)
    assert main(["attack", "--config", cfg, "--out-dir", str(tmp_path)]) == 0


def test_attack_missing_model_exits_1(tmp_path, capsys):
    attack_cfg = dict(ATTACK_CONFIG, model="missing_model.json")
    attack_cfg.pop("train")
    cfg = write_json(tmp_path / "exp.json", attack_cfg)
    assert main(["attack", "--config", cfg, "--out-dir", str(tmp_path)]) == 1
    assert "missing_model.json" in capsys.readouterr().err


def test_missing_config_exits_1(tmp_path, capsys):
    assert main(["attack", "--config", str(tmp_path / "absent.json")]) == 1
    assert "absent.json" in capsys.readouterr().err


def test_unknown_flag_exits_1(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["attack", "--config", "x.json", "--frobnicate"])
    assert exc.value.code == 1


def test_seed_env_override(tmp_path, monkeypatch):
    cfg = write_json(tmp_path / "exp.json", ATTACK_CONFIG)
    monkeypatch.setenv("P3A_SEED", "99")
    assert main(["attack", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "cli_demo.json").read_text())["meta"]
    assert meta["seed"] == 99
    # explicit flag beats the environment
    assert main(["attack", "--config", cfg, "--seed", "7",
                 "--out-dir", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "cli_demo.json").read_text())["meta"]
    assert meta["seed"] == 7


def test_ablate_methods_sweep(tmp_path):
    doc = {"experiment": ATTACK_CONFIG, "axis": "method",
           "values": ["adaptive", "defensive", "uniform"]}
    cfg = write_json(tmp_path / "ab.json", doc)
    assert main(["ablate", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    summary = (tmp_path / "cli_demo_ablation.csv").read_text().splitlines()
    assert summary[0].startswith("value,attack,final_delta_ce")
    assert len(summary) == 4  # header + one row per value
    assert (tmp_path / "cli_demo_method_defensive.csv").exists()


def test_ablate_bad_axis_exits_1(tmp_path, capsys):
    doc = {"experiment": ATTACK_CONFIG, "axis": "gamma", "values": [1]}
    cfg = write_json(tmp_path / "ab.json", doc)
    assert main(["ablate", "--config", cfg, "--out-dir", str(tmp_path)]) == 1
    assert "axis" in capsys.readouterr().err


def test_report_alignment(tmp_path, capsys):
    cfg = write_json(tmp_path / "exp.json", ATTACK_CONFIG)
    main(["attack", "--config", cfg, "--out-dir", str(tmp_path / "r1")])
    main(["attack", "--config", cfg, "--seed", "6", "--out-dir", str(tmp_path / "r2")])
    capsys.readouterr()  # drain the attack runs' output
    assert main(["report", str(tmp_path / "r1/cli_demo.csv"),
                 str(tmp_path / "r2/cli_demo.csv")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("attack\tstep")
    assert len(out) == 3  # header + two steps of the bim series
    assert main(["report", str(tmp_path / "nope.csv")]) == 1
