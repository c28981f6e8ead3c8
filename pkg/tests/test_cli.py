import json
import subprocess
import sys
from pathlib import Path

import pytest

from rwre.cli import main
from rwre.config import config_from_dict, load_config, shipped_configs
from rwre.env import ConfigError

SMALL = """
seed = 7

[law]
kind = "atomic"
L = 1
R = 2
atoms = [
  {{ weight = 0.5, probs = {{ "-1" = 0.7, "2" = 0.3 }} }},
  {{ weight = 0.5, probs = {{ "-1" = 0.2, "1" = 0.4, "2" = 0.4 }} }},
]

[budget]
n_steps = 2000
replicas = {replicas}
step_cap = 2000
barrier = 16
samples = 40
search_cap_levels = 32
cascade_levels = 60
"""


def small_config(tmp_path, replicas=20, extra=""):
    p = tmp_path / "small.toml"
    p.write_text(SMALL.format(replicas=replicas) + extra)
    return p


def run_cli(*args):
    return main([str(a) for a in args])


def test_shipped_configs_load():
    configs = shipped_configs()
    assert {"p075", "nn_mixed", "zero_speed", "bj12", "dirichlet", "jump2", "delta"} <= set(configs)
    for name, path in configs.items():
        cfg = load_config(path)
        assert cfg.name == name


def test_oracle_subcommand(tmp_path, capsys):
    assert run_cli("oracle", "--config", shipped_configs()["p075"], "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "oracle.json").read_text())
    assert rep["regime"] == "TransientRightBallistic"
    assert abs(rep["v"] - 0.5) < 1e-15
    assert abs(rep["brackets"]["EH1"]["value"] - 2.0) < 1e-9
    assert set(rep) >= {"regime", "v", "brackets", "M", "notes", "conditions"}
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "oracle" and "oracle.json" in manifest["outputs"]


def test_oracle_for_random_law_explains_missing_brackets(tmp_path):
    assert run_cli("oracle", "--config", shipped_configs()["bj12"], "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "oracle.json").read_text())
    assert rep["brackets"] == {} and rep["notes"]


def test_zero_replicas_is_a_config_error(tmp_path, capsys):
    cfg = small_config(tmp_path, replicas=0)
    assert run_cli("estimate", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "budget.replicas" in capsys.readouterr().err


def test_every_problem_is_listed(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text(
        'colour = "red"\n[law]\nkind = "dirichlet"\nL = 1\nR = 1\nalpha = { "-1" = -1.0, "1" = 1.0 }\n'
        "[budget]\nreplicas = 0\nstep_cap = -3\nbogus = 1\n[thresholds]\nn_sigma = 0\n"
    )
    assert run_cli("estimate", "--config", p) == 2
    err = capsys.readouterr().err
    for needle in ["colour", "seed is required", "Dirichlet parameter", "budget.replicas", "budget.step_cap",
                   "budget.bogus", "thresholds.n_sigma"]:
        assert needle in err
    assert err.count("  - ") == 7


def test_missing_config_file(tmp_path, capsys):
    assert run_cli("estimate", "--config", tmp_path / "nope.toml") == 2
    assert "does not exist" in capsys.readouterr().err


def test_config_hash_tracks_semantic_fields():
    base = load_config(shipped_configs()["bj12"])
    assert base.with_overrides(workers=4, out_dir="elsewhere", raw=True).config_hash == base.config_hash
    assert base.with_overrides(seed=base.seed + 1).config_hash != base.config_hash
    data = {"seed": 1, "law": {"kind": "nearest_neighbor", "atoms": [{"p": 0.75}]}}
    h = config_from_dict(data).config_hash
    assert config_from_dict({**data, "budget": {"replicas": 999}}).config_hash != h
    assert config_from_dict({**data, "thresholds": {"n_sigma": 3.0}}).config_hash != h
    assert config_from_dict({**data, "budget": {"replicas": 1000}}).config_hash == h  # default value


def test_seed_override_and_bad_seed(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"seed": -1, "law": {"kind": "nearest_neighbor", "atoms": [{"p": 0.75}]}})
    cfg = small_config(tmp_path)
    with pytest.raises(SystemExit):
        run_cli("oracle", "--config", cfg, "--seed", str(2**64))


def _statistic_files(out: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "manifest.json"}


def test_estimate_is_byte_identical_across_runs_and_workers(tmp_path):
    cfg = small_config(tmp_path)
    for name, workers in [("a", 1), ("b", 1), ("c", 4)]:
        assert run_cli("estimate", "--config", cfg, "--out", tmp_path / name, "--workers", workers, "--raw") == 0
    a = _statistic_files(tmp_path / "a")
    assert {"estimates.json", "estimates.txt", "raw_slope.csv", "raw_EH1.csv"} <= set(a)
    assert a == _statistic_files(tmp_path / "b") == _statistic_files(tmp_path / "c")
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mc = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert ma["outputs"] == mc["outputs"] and ma["config_hash"] == mc["config_hash"]
    assert ma["workers"] == 1 and mc["workers"] == 4


def test_estimate_output_contents(tmp_path):
    cfg = small_config(tmp_path)
    assert run_cli("estimate", "--config", cfg, "--out", tmp_path / "o", "--only", "slope,EH1") == 0
    est = json.loads((tmp_path / "o" / "estimates.json").read_text())
    assert set(est["estimates"]) == {"slope", "EH1"}
    e = est["estimates"]["slope"]
    assert set(e) >= {"point", "stderr", "n", "censored_fraction", "flags", "method"}
    assert run_cli("estimate", "--config", cfg, "--only", "nonsense") == 2


def test_seed_flag_changes_output(tmp_path):
    cfg = small_config(tmp_path)
    run_cli("estimate", "--config", cfg, "--out", tmp_path / "a", "--only", "slope")
    run_cli("estimate", "--config", cfg, "--out", tmp_path / "b", "--only", "slope", "--seed", "8")
    assert _statistic_files(tmp_path / "a") != _statistic_files(tmp_path / "b")


def test_simulate_then_regen_scan(tmp_path):
    cfg = small_config(tmp_path)
    assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "sim", "--paths", 2) == 0
    traj = tmp_path / "sim" / "trajectory_0001.txt"
    assert traj.exists() and (tmp_path / "sim" / "paths.csv").exists()
    assert run_cli("regen-scan", traj, "--out", tmp_path / "scan") == 0
    scan = json.loads((tmp_path / "scan" / "regen_scan.json").read_text())
    assert scan["D"] == 3 and scan["steps"] == 2000 and scan["regenerations"] > 0
    header = (tmp_path / "scan" / "increments.csv").read_text().splitlines()[0]
    assert header == "k,dt,dx"
    assert run_cli("regen-scan", traj, "--D", 1, "--out", tmp_path / "scan1") == 0
    assert json.loads((tmp_path / "scan1" / "regen_scan.json").read_text())["D"] == 1


def test_cascade_outputs(tmp_path):
    cfg = small_config(tmp_path)
    assert run_cli("cascade", "--config", cfg, "--out", tmp_path / "c") == 0
    lines = (tmp_path / "c" / "coalescence.csv").read_text().splitlines()
    assert lines[0] == "level,coalesced,site" and len(lines) > 50
    assert (tmp_path / "c" / "nbar0.csv").read_text().splitlines()[0] == "seed,x_star,value,censored"
    summary = json.loads((tmp_path / "c" / "cascade.json").read_text())
    assert 0 < summary["coalescence_frequency"] < 1


def test_cascade_rejected_exit_code(tmp_path, capsys):
    cfg = small_config(tmp_path, extra="cascade_step_cap = 1\n")
    assert run_cli("cascade", "--config", cfg, "--out", tmp_path / "c") == 1
    assert "step cap" in capsys.readouterr().err


def test_verdict_strict_exit_code(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(
        'seed = 1\n[law]\nkind = "nearest_neighbor"\natoms = [{ p = 0.55 }]\n'
        "[budget]\nn_steps = 100\nreplicas = 10\nstep_cap = 100\nbarrier = 4\n"
    )
    assert run_cli("verdict", "--config", p, "--out", tmp_path / "v", "--strict") == 3
    assert run_cli("verdict", "--config", p, "--out", tmp_path / "w") == 0
    v = json.loads((tmp_path / "v" / "verdict.json").read_text())
    assert v["verdict"] == "Inconclusive"


def test_verdict_left_transient_fails(tmp_path):
    p = tmp_path / "left.toml"
    p.write_text('seed = 1\n[law]\nkind = "nearest_neighbor"\natoms = [{ p = 0.25 }]\n')
    assert run_cli("verdict", "--config", p, "--out", tmp_path / "v") == 1


def test_figures_are_written_to_files(tmp_path):
    cfg = small_config(tmp_path)
    assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "s", "--figures") == 0
    assert run_cli("estimate", "--config", cfg, "--out", tmp_path / "e", "--only", "EH1", "--figures") == 0
    for f in [tmp_path / "s" / "trajectory_0000.png", tmp_path / "e" / "estimates.png"]:
        assert f.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert json.loads((tmp_path / "e" / "manifest.json").read_text())["figures"] == ["estimates.png"]


def test_console_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "rwre.cli", "oracle", "--config", str(shipped_configs()["jump2"]),
         "--out", str(tmp_path)],
        capture_output=True, text=True, check=True,
    )
    assert json.loads(out.stdout)["v"] == 0.5
