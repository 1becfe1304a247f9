import json
import os
import shutil

import pytest

from eulerci.cli import config_hash, load_config, main, parse_grid, parse_time_step

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


def cfg(name):
    return os.path.join(CONFIGS, name)


def test_parsers():
    assert parse_time_step("1/256") == 1 / 256
    assert parse_grid("8,8,64").shape == (8, 8, 64)
    assert parse_grid(32).shape == (32, 32, 32)


def test_validate_exit_codes(capsys):
    assert main(["validate", "--config", cfg("toy_step.json")]) == 0
    assert main(["validate", "--config", cfg("invalid_b.json")]) == 1
    err = capsys.readouterr().out + capsys.readouterr().err
    assert "b>1" in err or "b_gt_1" in err


def test_config_hash_stable():
    a = load_config(cfg("toy_small.json"))
    b = load_config(cfg("toy_small.json"))
    assert config_hash(a) == config_hash(b)


def test_run_refuses_small_grid(tmp_path):
    code = main(["run", "--config", cfg("toy_step.json"), "--out", str(tmp_path / "r"),
                 "--grid", "32"])
    assert code == 2
    assert not (tmp_path / "r" / "level_1").exists()


def test_level0_toy_run_and_verify(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({
        "params": {"derive_from_eps": True, "eps": 0.1, "lambda0": 8, "M": 3, "toy_mode": True},
        "grid": [8, 8, 32], "time_step": "1/64", "q": 0}))
    out = tmp_path / "r"
    assert main(["run", "--config", str(conf), "--out", str(out)]) == 0
    assert main(["verify", str(out)]) == 0
    summ = json.loads((out / "verify" / "summary.json").read_text())
    assert summ["levels"]["0"]["residual_max"] < 1e-10


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["run", "--config", cfg("toy_small.json"), "--out", str(out)]) == 0
    return out


def test_run_manifest(small_run):
    man = json.loads((small_run / "manifest.json").read_text())
    assert man["levels_completed"] == 1
    assert man["telemetry"]["maxrss_mb"] > 0
    assert len(man["config_hash"]) == 64


def test_verify_and_report(small_run):
    assert main(["verify", str(small_run), "--stride", "8"]) == 0
    assert (small_run / "verify" / "records.csv").exists()
    assert main(["report", str(small_run)]) == 0
    assert (small_run / "report" / "energy.csv").exists()
    assert (small_run / "report" / "perturbation.csv").exists()


def test_corrupted_snapshot_fails_verify(small_run, tmp_path):
    bad = tmp_path / "bad"
    shutil.copytree(small_run, bad)
    files = sorted((bad / "level_1" / "v").glob("*.bin"))
    raw = bytearray(files[len(files) // 2].read_bytes())
    raw[80] ^= 0x01
    files[len(files) // 2].write_bytes(bytes(raw))
    assert main(["verify", str(bad), "--stride", "8"]) == 1


def test_step_refused_beyond_grid(tmp_path):
    out = tmp_path / "r"
    assert main(["run", "--config", cfg("toy_step.json"), "--out", str(out), "--grid", "32",
                 "--q", "0"]) == 0
    assert main(["step", "--out", str(out)]) == 2
    assert not (out / "level_1").exists()
