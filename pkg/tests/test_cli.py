import json

import pytest

from milstein_mdp.cli import main, resolve_config
from milstein_mdp.errors import ConfigError


def _write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _base_cfg(tmp_path, **extra):
    cfg = {
        "model": {"id": "ou", "params": {"kappa": 1.0, "s": 1.0}},
        "output_dir": str(tmp_path / "out"),
        "master_seed": 7,
    }
    cfg.update(extra)
    return cfg


def test_validate_ou_exits_zero(tmp_path, capsys):
    path = _write(tmp_path, "ou.json", _base_cfg(tmp_path))
    assert main(["validate", "--config", path]) == 0
    summary = json.loads((tmp_path / "out" / "validate.summary.json").read_text())
    assert summary["results"]["lipschitz_ok"] is True
    assert summary["passed"] is True


def test_tails_resolution_precondition_exit_2(tmp_path):
    cfg = _base_cfg(
        tmp_path,
        h={"id": "identity"},
        eta=0.05,
        replicas=10,
        xs=[1.0, 2.0],
    )
    path = _write(tmp_path, "tails.json", cfg)
    assert main(["tails", "--config", path]) == 2


def test_unknown_key_exit_2(tmp_path):
    cfg = _base_cfg(tmp_path)
    cfg["banana"] = 1
    path = _write(tmp_path, "bad.json", cfg)
    assert main(["validate", "--config", path]) == 2


def test_missing_config_exit_2(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "absent.json")]) == 2


def test_eta_out_of_range_exit_2(tmp_path):
    cfg = _base_cfg(tmp_path, h={"id": "identity"}, eta=1.5, replicas=10)
    path = _write(tmp_path, "sim.json", cfg)
    assert main(["simulate", "--config", path]) == 2


def test_runtime_failure_exit_3(tmp_path):
    # unattainable Stein tolerance on a coarse grid -> runtime failure
    cfg = _base_cfg(
        tmp_path,
        h={"id": "gauss_bump"},
        eta=0.1,
        replicas=5,
        stein={"X": 10.0, "n_grid": 1024, "tolerance": 1e-14},
    )
    path = _write(tmp_path, "sim.json", cfg)
    assert main(["simulate", "--config", path]) == 3


def test_simulate_rerun_byte_identical(tmp_path):
    cfg = _base_cfg(
        tmp_path, h={"id": "identity"}, eta=0.1, replicas=50,
        stein={"X": 10.0, "n_grid": 4096, "tolerance": 1e-5},
    )
    path = _write(tmp_path, "sim.json", cfg)
    assert main(["simulate", "--config", path]) == 0
    first = (tmp_path / "out" / "simulate.csv").read_bytes()
    assert main(["simulate", "--config", path, "--threads", "6"]) == 0
    second = (tmp_path / "out" / "simulate.csv").read_bytes()
    assert first == second


def test_round_trip_from_embedded_config(tmp_path):
    cfg = _base_cfg(
        tmp_path, h={"id": "identity"}, eta=0.1, replicas=30,
        stein={"X": 10.0, "n_grid": 4096, "tolerance": 1e-5},
    )
    path = _write(tmp_path, "sim.json", cfg)
    assert main(["simulate", "--config", path]) == 0
    out = tmp_path / "out"
    csv1 = (out / "simulate.csv").read_bytes()
    embedded = json.loads((out / "simulate.summary.json").read_text())["config"]
    embedded["output_dir"] = str(tmp_path / "out2")
    path2 = _write(tmp_path, "embedded.json", embedded)
    assert main(["simulate", "--config", path2]) == 0
    csv2 = (tmp_path / "out2" / "simulate.csv").read_bytes()
    assert csv1 == csv2


def test_set_overrides(tmp_path):
    cfg = _base_cfg(tmp_path)
    path = _write(tmp_path, "ou.json", cfg)
    assert (
        main(
            [
                "validate", "--config", path,
                "--set", "model.params.kappa=2.0",
                "--set", "grid.n_points=500",
                "--set", "grid.n_pairs=500",
            ]
        )
        == 0
    )
    summary = json.loads((tmp_path / "out" / "validate.summary.json").read_text())
    assert summary["config"]["model"]["params"]["kappa"] == 2.0
    assert summary["config"]["grid"]["n_points"] == 500


def test_dry_run_prints_plan(tmp_path, capsys):
    cfg = _base_cfg(tmp_path, h={"id": "identity"}, eta=0.05, replicas=1000, xs=[1.0])
    path = _write(tmp_path, "tails.json", cfg)
    assert main(["tails", "--config", path, "--dry-run"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["command"] == "tails"
    assert plan["total_steps"] == 400 * 1000
    assert not (tmp_path / "out").exists()  # dry run writes nothing


def test_stein_csv_schema(tmp_path):
    cfg = _base_cfg(
        tmp_path, h={"id": "identity"},
        stein={"X": 10.0, "n_grid": 4096, "tolerance": 1e-5},
    )
    path = _write(tmp_path, "st.json", cfg)
    assert main(["stein", "--config", path]) == 0
    lines = (tmp_path / "out" / "stein.csv").read_text().splitlines()
    assert lines[0] == "x,f,f_prime,f_double_prime,residual"
    assert len(lines) == 4096 + 2


def test_command_key_rejection(tmp_path):
    # 'xs' belongs to tails only
    cfg = _base_cfg(tmp_path, h={"id": "identity"}, eta=0.1, replicas=5, xs=[1.0])
    path = _write(tmp_path, "sim.json", cfg)
    assert main(["simulate", "--config", path]) == 2


def test_resolve_config_requires_eta_list_for_order():
    with pytest.raises(ConfigError):
        resolve_config(
            "order",
            {
                "model": {"id": "tanh1d"},
                "output_dir": "o",
                "eta": 0.1,
                "paths": 8,
            },
        )
