import json
from pathlib import Path

import numpy as np
import pytest

from densyn.cli import main


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


TOY_SYNTH = {
    "system": {"kind": "toy",
               "params": {"kappa": 1.0, "u_max": 1.0,
                          "box_lo": -1.0, "box_hi": 3.0}},
    "grid": {"axes": [{"lo": -1.0, "hi": 3.0, "count": 101}]},
    "danger": {"type": "box", "lo": [2.0], "hi": [3.0]},
    "source": {"type": "box", "lo": [0.0], "hi": [0.5], "amplitude": 1.0},
    "legacy": {"type": "constant", "value": [1.0]},
    "synth": {"mode": "safe", "alpha_step": 100.0, "eps": 1e-4,
              "hjb": {"n_samples": 21, "eps_v": 1e-6},
              "density": {"dt": 0.005, "t_max": 16.0}},
}


def test_missing_kappa_exits_1_naming_key(tmp_path, capsys):
    cfg = json.loads(json.dumps(TOY_SYNTH))
    del cfg["system"]["params"]["kappa"]
    rc = main(["synth", "--config", write_cfg(tmp_path, cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 1
    assert "kappa" in capsys.readouterr().err


def test_malformed_config_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    rc = main(["synth", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "config error" in capsys.readouterr().err


def test_empty_danger_one_iteration(tmp_path):
    cfg = json.loads(json.dumps(TOY_SYNTH))
    cfg["danger"] = {"type": "empty"}
    out = tmp_path / "out"
    rc = main(["--quiet", "synth", "--config", write_cfg(tmp_path, cfg),
               "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["converged"] is True
    assert len(report["iterations"]) == 1
    assert (out / "convergence.csv").exists()
    assert (out / "resolved_config.json").exists()


def test_toy_synth_end_to_end_and_determinism(tmp_path):
    out1 = tmp_path / "o1"
    out2 = tmp_path / "o2"
    cfgp = write_cfg(tmp_path, TOY_SYNTH)
    assert main(["--quiet", "synth", "--config", cfgp, "--out", str(out1)]) == 0
    assert main(["--quiet", "synth", "--config", cfgp, "--out", str(out2)]) == 0
    for name in ("convergence.csv", "report.json", "policy_u_0.bin", "value.bin"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    report = json.loads((out1 / "report.json").read_text())
    assert report["converged"] is True
    # exported fields load back
    from densyn.field import load_field
    pol = load_field(out1 / "policy_u_0")
    assert pol.grid.num_nodes == 101


def test_synth_nonconvergence_exit_2(tmp_path):
    cfg = json.loads(json.dumps(TOY_SYNTH))
    cfg["synth"]["max_outer"] = 1
    cfg["synth"]["alpha_step"] = 1e-6  # too small to matter in one round
    out = tmp_path / "out"
    rc = main(["--quiet", "synth", "--config", write_cfg(tmp_path, cfg),
               "--out", str(out)])
    assert rc == 2
    report = json.loads((out / "report.json").read_text())
    assert report["converged"] is False
    assert (out / "convergence.csv").exists()  # artifacts still written


ACC_SIM = {
    "system": {"kind": "acc", "params": {"kappa": 0.2}},
    "sim": {"controller": "legacy", "x0": [13.0, 13.0, 18.2],
            "t_sim": 3.0, "dt_log": 0.05, "disturbance": "zero"},
}


def test_simulate_legacy_equilibrium(tmp_path):
    out = tmp_path / "sim"
    rc = main(["--quiet", "simulate", "--config", write_cfg(tmp_path, ACC_SIM),
               "--out", str(out)])
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["cost"] == pytest.approx(0.0, abs=1e-10)
    assert summary["ok"] is True
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,x_1,x_2,x_3,u_1,d_1,cost"


def test_simulate_missing_x0_exits_1(tmp_path, capsys):
    cfg = json.loads(json.dumps(ACC_SIM))
    cfg["sim"]["x0"] = None
    rc = main(["--quiet", "simulate", "--config", write_cfg(tmp_path, cfg),
               "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "x0" in capsys.readouterr().err


def test_simulate_missing_policy_dir_exits_1(tmp_path):
    cfg = json.loads(json.dumps(ACC_SIM))
    cfg["sim"]["controller"] = "policy"
    rc = main(["--quiet", "simulate", "--config", write_cfg(tmp_path, cfg),
               "--out", str(tmp_path / "o")])
    assert rc == 1


def test_compare_requires_policy_dir(tmp_path, capsys):
    cfg = {"system": {"kind": "acc", "params": {"kappa": 0.2}}}
    rc = main(["--quiet", "compare", "--config", write_cfg(tmp_path, cfg),
               "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "policy_dir" in capsys.readouterr().err


def test_unwritable_output_dir_exits_1(tmp_path, capsys):
    target = tmp_path / "blocked"
    target.write_text("a file, not a directory")
    rc = main(["--quiet", "export-schema", "--out", str(target)]) \
        if False else main(["--quiet", "synth",
                            "--config", write_cfg(tmp_path, TOY_SYNTH),
                            "--out", str(target)])
    assert rc == 1


def test_export_schema(tmp_path):
    out = tmp_path / "schema"
    rc = main(["export-schema", "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "config_schema.json").read_text())
    assert "kappa" in json.dumps(doc["notes"])
    assert doc["defaults"]["synth"]["mode"] == "robust"
