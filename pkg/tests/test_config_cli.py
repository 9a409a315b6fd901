import json
from pathlib import Path

import pytest

from kvnsim.cli import main
from kvnsim.config import config_hash, parse_scenario, parse_scenario_text, resolve
from kvnsim.errors import ConfigError
from kvnsim.runner import run_scenario

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "kvnsim" / "scenarios"


def minimal(**over):
    d = {
        "name": "tiny",
        "grid": {"axes": [{"label": "x", "levels": 64, "extent": 4.0, "x_min": -2.0}]},
        "system": {"velocity": ["x1"], "divergence": "1"},
        "dt": 0.01,
        "t_final": 0.1,
        "initial_state": {"kind": "gaussian", "center": [0.3], "sigmas": [0.2]},
        "observables": [{"name": "x_mean", "kind": "moment", "axis": "x"}],
    }
    d.update(over)
    return d


def write_cfg(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


def test_minimal_config_fills_defaults():
    scen = parse_scenario_text(json.dumps(minimal()), "<test>")
    assert scen.grid.hbar == 1.0
    assert scen.scheme == "central_fd2"
    assert scen.propagator.method == "cayley"
    res = resolve(scen)
    assert res.grid.shape == (64,)


def test_levels_below_four():
    d = minimal()
    d["grid"]["axes"][0]["levels"] = 3
    with pytest.raises(ConfigError, match="levels must be >= 4"):
        parse_scenario_text(json.dumps(d), "<test>")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match=r"unknown key \(strict mode\)"):
        parse_scenario_text(json.dumps(minimal(foo=1)), "<test>")


def test_json_error_location():
    with pytest.raises(ConfigError, match="line 2, column"):
        parse_scenario_text('{\n  "name": ,\n}', "<test>")


def test_duplicate_key():
    with pytest.raises(ConfigError, match="duplicate key"):
        parse_scenario_text('{"name": "a", "name": "b"}', "<test>")


def test_dimension_mismatch():
    d = minimal(system={"builtin": "harmonic_oscillator"})
    with pytest.raises(ConfigError, match="dimension mismatch"):
        resolve(parse_scenario_text(json.dumps(d), "<test>"))


def test_lagrangian_needs_canonical_system():
    d = minimal(w_mode="lagrangian")
    with pytest.raises(ConfigError, match="canonical"):
        resolve(parse_scenario_text(json.dumps(d), "<test>"))


def test_hash_ignores_output_dir():
    a = parse_scenario_text(json.dumps(minimal(output_dir="a")), "<test>")
    b = parse_scenario_text(json.dumps(minimal(output_dir="b")), "<test>")
    c = parse_scenario_text(json.dumps(minimal(dt=0.02)), "<test>")
    assert config_hash(a) == config_hash(b) != config_hash(c)


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.json")), ids=lambda p: p.stem)
def test_bundled_scenarios_resolve(path):
    resolve(parse_scenario(path))


def test_check_command(tmp_path, capsys):
    assert main(["check", "--config", str(write_cfg(tmp_path, minimal()))]) == 0
    out = capsys.readouterr().out
    assert out.startswith("OK\n")
    assert json.loads(out[3:])["scenario"]["name"] == "tiny"


def test_check_config_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{")
    assert main(["check", "--config", str(p)]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["check", "--config", str(tmp_path / "nope.json")]) == 2


def test_run_success_and_outputs(tmp_path):
    d = minimal(gates=[{"kind": "observable", "observable": "x_mean", "expected": "0.3*exp(t)", "rel_tol": 0.01},
                       {"kind": "unitarity", "tol": 1e-9}])
    out = tmp_path / "out"
    assert main(["run", "--config", str(write_cfg(tmp_path, d)), "--out", str(out), "--quiet"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["exit_code"] == 0 and rep["failed_stage"] is None
    paths = {m["path"] for m in rep["manifest"]}
    assert {"observables.csv", "norm.csv", "conservation.csv"} <= paths
    head = (out / "observables.csv").read_text().splitlines()[0]
    assert f"config_sha256={rep['config_hash']}" in head


def test_run_gate_failure_exit_code(tmp_path):
    d = minimal(gates=[{"kind": "observable", "observable": "x_mean", "expected": "0.3", "rel_tol": 1e-6}])
    assert main(["run", "--config", str(write_cfg(tmp_path, d)), "--out", str(tmp_path / "o"), "--quiet"]) == 1


def test_stage_failure_keeps_partial_outputs(tmp_path):
    d = minimal(system={"velocity": ["x1^2"], "divergence": "2*x1"},
                characteristics={"x0": [50.0], "dt": 1e-3})
    out = tmp_path / "o"
    assert main(["run", "--config", str(write_cfg(tmp_path, d)), "--out", str(out), "--quiet"]) == 3
    rep = json.loads((out / "report.json").read_text())
    assert rep["failed_stage"] == "characteristics"
    assert rep["exit_code"] == 3
    assert rep["manifest"] and all(m["partial"] for m in rep["manifest"])
    for m in rep["manifest"]:
        assert (out / m["path"]).is_file()
    assert (out / "observables.csv").is_file()


def test_resources_command(capsys):
    assert main(["resources", "--config", str(SCENARIOS / "free_particle_momentum.json")]) == 0
    est = json.loads(capsys.readouterr().out)
    assert est["s"] == 3 and est["ell"] == 6
    assert est["quantum_cost"] == 147456


def test_seed_override(tmp_path):
    p = write_cfg(tmp_path, minimal(seed=5))
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o"), "--seed", "11", "--quiet"]) == 0
    assert json.loads((tmp_path / "o" / "report.json").read_text())["scenario"]["seed"] == 11


def test_bad_seed_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["run", "--config", str(write_cfg(tmp_path, minimal())), "--seed", "-1"])


def test_thread_limit_env(tmp_path, monkeypatch):
    p = write_cfg(tmp_path, minimal())
    monkeypatch.setenv("KVNSIM_THREADS", "1")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    monkeypatch.setenv("KVNSIM_THREADS", "many")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == 2


def test_run_scenario_api_repeatable(tmp_path):
    scen = parse_scenario(write_cfg(tmp_path, minimal()))
    run_scenario(scen, tmp_path / "a")
    run_scenario(scen, tmp_path / "b")
    for name in ("observables.csv", "norm.csv", "conservation.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
