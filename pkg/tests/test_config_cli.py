import json
import os

import pytest

from mrtoc import cli, config
from mrtoc.errors import ConfigError

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

SMALL = ["--set", "data.samples_per_class=20", "--set", "data.num_classes=3",
         "--set", "model.k_max=4", "--set", "model.m_subvectors=2",
         "--set", "model.encoder_hidden=[8]", "--set", "model.head_hidden=[8]",
         "--set", "train.epochs_per_level=1", "--set", "eval.trials=2"]


def test_round_trip(tmp_path):
    cfg = config.paper_preset()
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    again = config.load(p)
    assert again == cfg
    assert again.to_json() == cfg.to_json()
    assert again.digest() == cfg.digest()


def test_unknown_key_rejected(tmp_path):
    raw = config.desk_preset().to_dict()
    raw["train"]["epocs_per_level"] = 3
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(raw))
    with pytest.raises(ConfigError, match="train.epocs_per_level"):
        config.load(p)


def test_invalid_value_names_key():
    with pytest.raises(ConfigError, match="model.k_max"):
        config.apply_overrides(config.desk_preset(), ["model.k_max=12"])


def test_env_seed(monkeypatch):
    monkeypatch.setenv("MRTOC_SEED", "77")
    assert config.apply_env(config.desk_preset()).seed == 77
    monkeypatch.setenv("MRTOC_SEED", "x")
    with pytest.raises(ConfigError):
        config.apply_env(config.desk_preset())


@pytest.mark.parametrize("name", sorted(config.PRESETS))
def test_shipped_preset_files_match(name):
    assert config.load(os.path.join(REPO, "configs", f"{name}_preset.json")) == config.PRESETS[name]()


def test_paper_preset_values():
    p = config.paper_preset()
    assert (p.model.k_max, p.model.m_subvectors, p.model.dim) == (256, 500, 2)
    assert p.model.m_subvectors * p.model.dim == 1000
    assert p.train.eps_train == 0.01
    assert p.eval.eps_list == [0.001, 0.01, 0.05]
    tc = p.train_config()
    assert tc.levels == 8


# --- cli ---------------------------------------------------------------------------------------

def test_select_level(capsys):
    assert cli.run(["select-level", "--vbit", "1000", "--tau", "2.0", "--m", "500", "--kmax", "256"]) == 0
    assert capsys.readouterr().out.strip() == "4"


def test_select_level_infeasible(capsys):
    assert cli.run(["select-level", "--vbit", "100", "--tau", "1", "--m", "500", "--kmax", "256"]) == 2
    assert "minimal feasible tau: 5" in capsys.readouterr().err


def test_select_level_bad_kmax():
    assert cli.run(["select-level", "--vbit", "100", "--tau", "1", "--m", "5", "--kmax", "100"]) == 1


def test_usage_error():
    assert cli.run(["frobnicate"]) == 1


def test_eval_missing_checkpoint(tmp_path, capsys):
    assert cli.run(["eval", "--checkpoint", str(tmp_path / "nope.mrtoc")]) == 2
    assert "checkpoint not found" in capsys.readouterr().err


def test_train_unknown_key_exit_1(tmp_path, capsys):
    assert cli.run(["train", "--out", str(tmp_path), "--set", "train.bogus=1"]) == 1
    assert "train.bogus" in capsys.readouterr().err


def test_bad_config_file_exit_1(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": {"kmax": 4}}))
    assert cli.run(["show-config", "--config", str(p)]) == 1
    assert "model.kmax" in capsys.readouterr().err


def test_train_eval_sweep_dump(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.run(["train", "--out", str(out), "--seed", "5"] + SMALL) == 0
    for name in ("checkpoint.mrtoc", "train_log.csv", "config.json"):
        assert (out / name).exists()
    cfg = config.load(out / "config.json")
    assert cfg.seed == 5
    head = (out / "train_log.csv").read_text().splitlines()[0]
    assert head == f"# mrtoc config_sha256={cfg.digest()} seed=5"
    ckpt = str(out / "checkpoint.mrtoc")

    assert cli.run(["eval", "--checkpoint", ckpt, "--level", "2", "--eps", "0.01"]) == 0
    lines = (out / "eval.csv").read_text().splitlines()
    assert lines[0].startswith("# mrtoc config_sha256=") and len(lines) == 3

    assert cli.run(["eval", "--checkpoint", ckpt, "--level", "3"]) == 2

    assert cli.run(["sweep", "--checkpoint", ckpt]) == 0
    eps_rows = (out / "sweep_eps.csv").read_text().splitlines()
    ber_rows = (out / "sweep_ber.csv").read_text().splitlines()
    assert len(eps_rows) == 2 + 2 * 3 and len(ber_rows) == 2 + 2 * 4

    capsys.readouterr()
    assert cli.run(["dump-codebook", "--checkpoint", ckpt]) == 0
    dumped = capsys.readouterr().out.splitlines()
    assert dumped[0] == "level_introduced,index,dim_0,dim_1" and len(dumped) == 5


def test_gen_data(tmp_path):
    path = tmp_path / "d.csv"
    assert cli.run(["gen-data", "--output", str(path), "--set", "data.samples_per_class=3",
                    "--set", "data.num_classes=2", "--set", "data.dim=2"]) == 0
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# mrtoc config_sha256=")
    assert len(lines) == 2 + 6


def test_show_config_echo_reloads(tmp_path, capsys):
    assert cli.run(["show-config", "--preset", "paper"]) == 0
    p = tmp_path / "echo.json"
    p.write_text(capsys.readouterr().out)
    assert config.load(p) == config.paper_preset()
