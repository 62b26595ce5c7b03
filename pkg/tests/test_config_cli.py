import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from herdsim import _backend
from herdsim.cli import main
from herdsim.config import EXPERIMENTS, ConfigError, ExperimentConfig, from_dict, load

MINIMAL = Path(__file__).resolve().parents[1] / "src" / "herdsim" / "configs" / "simulate_minimal.yaml"


def small(experiment, **sections):
    cfg = {
        "experiment": experiment,
        "seed": 7,
        "dynamics": {
            "T": 0.2, "dt": 0.02, "sigma": 0.25, "N": 8, "M": 200,
            "herders": [[-2.0], [2.0]],
            "kernels": {
                "H1": {"family": "linear", "a": 1.0},
                "H2": {"family": "saturating", "a": -0.2},
                "K1": {"family": "saturating", "a": -1.0},
                "K2": {"family": "saturating", "a": -0.5},
            },
        },
        "control": {
            "intervals": 1,
            "laws": [
                {"h": [[[0.5, -0.25]]], "g": {"tag": "tanh_statistic", "centers": [0.0, 1.0]}},
                {"h": [[[-0.5, 0.25]]], "g": {"tag": "tanh_statistic", "centers": [0.0, 1.0]}},
            ],
        },
        "cost": {
            "lagrangian": {"x_target": [0.5], "beta": 0.1, "y_target": [[-1.0], [1.0]]},
            "psi": {"lam": 0.05},
        },
        "fp": {"cells": 64, "snapshots": 11},
        "chaos": {"N_grid": [4, 8], "M_ref": 64, "max_blocks": 4},
        "equivalence": {"cells": [64, 128], "M": [200, 400]},
        "stability": {"j_grid": [2, 4]},
        "optimizer": {"budget": 8, "mc_replicas": 2},
        "gamma_gap": {"N_grid": [4, 8]},
    }
    cfg.update(sections)
    return cfg


def write_cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def test_round_trip_is_lossless():
    cfg = from_dict(small("optimize"))
    again = from_dict(yaml.safe_load(cfg.to_yaml()))
    assert again == cfg
    assert again.content_hash() == cfg.content_hash()


def test_hash_ignores_output_location_only():
    a = from_dict(small("mkv"))
    b = from_dict({**small("mkv"), "output_dir": "elsewhere"})
    c = from_dict({**small("mkv"), "seed": 8})
    assert a.content_hash() == b.content_hash()
    assert a.content_hash() != c.content_hash()


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError) as err:
        from_dict({**small("mkv"), "colour": "blue"})
    assert "colour" in str(err.value)
    data = small("mkv")
    data["dynamics"]["sigmaa"] = 0.1
    with pytest.raises(ConfigError):
        from_dict(data)


def test_all_problems_are_listed():
    data = small("gamma_gap")
    data["dynamics"]["sigma"] = -1.0
    data["dynamics"]["dt"] = 0.03
    data["gamma_gap"]["N_grid"] = [8, 4]
    with pytest.raises(ConfigError) as err:
        from_dict(data)
    assert any(p.startswith("dynamics.sigma") for p in err.value.problems)
    data["dynamics"]["sigma"] = 0.1
    with pytest.raises(ConfigError) as err:
        from_dict(data)
    text = "\n".join(err.value.problems)
    assert "dynamics.dt" in text and "gamma_gap.N_grid" in text


def test_builders():
    cfg = from_dict(small("mkv"))
    dyn = cfg.dynamics_obj()
    assert dyn.m == 2 and dyn.kernels.K1.a == -1.0
    assert dyn.controls[1].h[0, 0, 0] == -0.5
    assert cfg.cost_spec().psi.lam == 0.05
    assert cfg.picard_cfg().tol == 1e-3
    assert set(EXPERIMENTS) >= {"simulate", "chaos_rate", "gamma_gap"}


def test_load_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: [unterminated")
    with pytest.raises(ConfigError):
        load(bad)
    assert load(MINIMAL).experiment == "simulate"


@pytest.mark.parametrize("experiment", EXPERIMENTS)
def test_every_experiment_runs(tmp_path, experiment, capsys):
    path = write_cfg(tmp_path, small(experiment))
    out = tmp_path / "run"
    assert main(["run", "--config", str(path), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["experiment"] == experiment
    assert man["backend"] == _backend.name()
    for meta in man["artifacts"].values():
        assert (out / meta["path"]).exists()
    assert (out / "summary.txt").exists() and (out / "config.yaml").exists()
    assert load(out / "config.yaml").content_hash() == man["config_hash"]
    expected = 0 if all(c["passed"] for c in man["checks"]) else 1
    assert main(["report", str(out)]) == expected


def test_rerun_is_byte_identical(tmp_path):
    path = write_cfg(tmp_path, small("simulate"))
    for d in ("a", "b"):
        assert main(["run", "--config", str(path), "--out", str(tmp_path / d)]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["artifacts"] == mb["artifacts"]
    assert ma["config_hash"] == mb["config_hash"]
    assert (tmp_path / "a" / "summary.txt").read_bytes() == (tmp_path / "b" / "summary.txt").read_bytes()


def test_report_is_stable_across_reruns(tmp_path, capsys):
    path = write_cfg(tmp_path, small("fp"))
    texts = []
    for d in ("a", "b"):
        main(["run", "--config", str(path), "--out", str(tmp_path / d)])
        capsys.readouterr()
        assert main(["report", str(tmp_path / d)]) == 0
        texts.append(capsys.readouterr().out)
    assert texts[0] == texts[1]
    assert "PASS initial_entropy_finite" in texts[0]
    assert texts[0].endswith("result: all checks passed\n")


def test_seed_override_changes_output(tmp_path):
    path = write_cfg(tmp_path, small("simulate"))
    main(["run", "--config", str(path), "--out", str(tmp_path / "a")])
    main(["run", "--config", str(path), "--out", str(tmp_path / "b"), "--seed", "99"])
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert mb["seed"] == 99
    assert ma["artifacts"]["trajectory.csv"]["sha256"] != mb["artifacts"]["trajectory.csv"]["sha256"]


def test_report_flags_missing_and_modified(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(MINIMAL), "--out", str(out)]) == 0
    assert main(["report", str(out / "manifest.json")]) == 0
    csv_path = out / "trajectory.csv"
    csv_path.write_text(csv_path.read_text() + "\n")
    capsys.readouterr()
    assert main(["report", str(out)]) == 1
    assert "MODIFIED" in capsys.readouterr().out
    csv_path.unlink()
    assert main(["report", str(out)]) == 1
    assert "MISSING artifact trajectory.csv" in capsys.readouterr().out


def test_invalid_config_exit_code(tmp_path, capsys):
    data = small("mkv")
    data["dynamics"]["sigma"] = -0.5
    assert main(["run", "--config", str(write_cfg(tmp_path, data)), "--out", str(tmp_path / "o")]) == 2
    assert "sigma" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_convert_round_trip(tmp_path):
    data = small("simulate", output={"binary_trajectory": True})
    out = tmp_path / "run"
    assert main(["run", "--config", str(write_cfg(tmp_path, data)), "--out", str(out)]) == 0
    assert main(["convert", str(out / "trajectory.bin"), str(tmp_path / "t.csv")]) == 0
    assert (tmp_path / "t.csv").read_text() == (out / "trajectory.csv").read_text()
    assert main(["convert", str(tmp_path / "t.csv"), str(tmp_path / "t.bin")]) == 0
    assert (tmp_path / "t.bin").read_bytes() == (out / "trajectory.bin").read_bytes()
    assert main(["convert", str(tmp_path / "t.csv"), str(tmp_path / "t.txt")]) == 1


def test_threads_flag_and_environment(tmp_path, monkeypatch):
    previous = _backend.get_num_threads()
    try:
        out = tmp_path / "run"
        assert main(["run", "--threads", "2", "--config", str(MINIMAL), "--out", str(out)]) == 0
        assert json.loads((out / "manifest.json").read_text())["threads"] == 2
        assert main(["run", "--threads", "0", "--config", str(MINIMAL), "--out", str(out)]) == 2
        env = {"HERDSIM_THREADS": "3", "PATH": "/usr/bin:/bin"}
        proc = subprocess.run([sys.executable, "-m", "herdsim.cli", "run", "--config", str(MINIMAL),
                               "--out", str(tmp_path / "env")], env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert json.loads((tmp_path / "env" / "manifest.json").read_text())["threads"] == 3
    finally:
        _backend.set_num_threads(previous)


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "herdsim" in capsys.readouterr().out


def test_experiment_config_requires_experiment():
    with pytest.raises(ConfigError):
        from_dict({})
    assert isinstance(from_dict({"experiment": "simulate"}), ExperimentConfig)
