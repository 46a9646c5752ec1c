import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from couette_kinetic.cli import ConfigError, RunConfig, build_config, main, parse_config

SMALL = ["--n-v", "6", "--n-y", "8", "--n-omega", "64"]


@pytest.fixture
def run(tmp_path, monkeypatch):
    monkeypatch.setenv("COUETTE_KINETIC_CACHE", str(tmp_path / "cache"))
    runner = CliRunner()

    def invoke(*args, out="out"):
        result = runner.invoke(main, [*args, "--output-dir", str(tmp_path / out)])
        return result, tmp_path / out

    return invoke


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_minimal_config_resolves_every_default(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# shear only\nalpha = 0.01  # trailing comment\n")
    cfg = parse_config(p)
    echo = cfg.echo()
    assert set(echo) == {f for f in RunConfig.__dataclass_fields__}
    assert echo["alpha"] == 0.01 and echo["M"] != "auto"
    assert echo["epsilon_schedule"] == [0.1, 0.01, 0.001, 1e-8]


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        build_config({"alpah": "0.1"})
    with pytest.raises(ConfigError, match="stability check failed"):
        build_config({"alpha": "1.0", "q": "100"})
    assert build_config({"alpha": "1.0", "q": "100", "override_stability": "yes"}).q == 100
    with pytest.raises(ConfigError):
        build_config({"n_omega": "15"})
    with pytest.raises(ConfigError):
        build_config({"M": "9.0"})
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.cfg")
    bad = tmp_path / "bad.cfg"
    bad.write_text("alpha 0.1\n")
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_auto_cutoff_is_capped():
    cfg = build_config({"M": "auto", "q": "4", "v_max": "6"})
    assert cfg.M == pytest.approx(4.8) and cfg.M_capped
    assert build_config({"epsilon_schedule": "0.1, 0.01"}).epsilon_schedule == (0.1, 0.01)


def test_steady_at_zero_shear_is_equilibrium(run):
    result, out = run("steady", "--alpha", "0", *SMALL)
    assert result.exit_code == 0, result.output
    meta = json.loads((out / "steady_meta.json").read_text())
    assert meta["residual_sup"] < 1e-12
    assert meta["bc_residual_bottom"] < 1e-15 and meta["min_F_st"] > 0
    for name in ("g1.bin", "gr1.bin", "gr2.bin", "profile.csv", "run_meta.json"):
        assert (out / name).exists()
    prof = np.array(_rows(out / "profile.csv")[1:], dtype=float)
    assert np.max(np.abs(prof[:, 1:])) < 1e-12
    run_meta = json.loads((out / "run_meta.json").read_text())
    assert run_meta["config"]["n_y"] == 8 and run_meta["grid_hash"]


def test_steady_then_report(run):
    result, out = run("steady", "--alpha", "0.01", *SMALL)
    assert result.exit_code == 0, result.output
    meta = json.loads((out / "steady_meta.json").read_text())
    assert meta["min_F_st"] > 0 and meta["bc_residual_bottom"] < 1e-9
    result, rep = run("report", str(out / "g1.bin"), *SMALL, out="rep")
    assert result.exit_code == 0, result.output
    names = [r[0] for r in _rows(rep / "report_norms.csv")[1:]]
    assert names == ["weighted_sup", "l2", "trace_out", "trace_in", "macro_l2"]
    assert (rep / "report_moments.csv").exists()
    result, _ = run("report", str(out / "g1.bin"), "--n-v", "8", "--n-y", "8", out="rep2")
    assert result.exit_code != 0 and "grid hash" in result.output


def test_verify_kernel_table(run):
    result, out = run("verify-kernel", *SMALL)
    assert result.exit_code == 0, result.output
    rows = _rows(out / "kernel_checks.csv")
    assert rows[0] == ["check_name", "value", "bound", "pass"]
    checks = {r[0]: r for r in rows[1:]}
    assert checks["nu0_spread"][3] == "True" and checks["K_asymmetry"][3] == "True"


def test_cycles_are_monotone_and_deterministic(run):
    args = ("cycles", "--T0", "10", "--kmax", "40", "--n-samples", "20000", "--seed", "3")
    r1, out1 = run(*args, out="a")
    r2, out2 = run(*args, out="b")
    assert r1.exit_code == 0 and r2.exit_code == 0
    assert (out1 / "survival.csv").read_bytes() == (out2 / "survival.csv").read_bytes()
    rows = _rows(out1 / "survival.csv")
    assert rows[0] == ["T0", "k", "n_samples", "survival", "stderr"]
    surv = np.array([float(r[3]) for r in rows[1:]])
    assert len(surv) == 40 and np.all(np.diff(surv) <= 0)


def test_unsteady_outputs(run):
    result, out = run("unsteady", "--alpha", "0.01", "--t-end", "4", *SMALL)
    assert result.exit_code == 0, result.output
    rows = _rows(out / "decay.csv")
    assert rows[0] == ["t", "sup_norm", "l2_norm", "mass", "min_F"]
    fit = json.loads((out / "decay_fit.json").read_text())
    assert fit["lambda0"] > 0


def test_kernel_cache_does_not_change_outputs(run, tmp_path):
    import shutil

    r1, out1 = run("steady", "--alpha", "0.01", *SMALL, out="first")
    shutil.rmtree(tmp_path / "cache")
    r2, out2 = run("steady", "--alpha", "0.01", *SMALL, out="second")
    assert r1.exit_code == 0 and r2.exit_code == 0
    assert (out1 / "profile.csv").read_bytes() == (out2 / "profile.csv").read_bytes()
    assert (out1 / "g1.bin").read_bytes() == (out2 / "g1.bin").read_bytes()


def test_errors_exit_nonzero(run):
    result, _ = run("steady", "--n-omega", "15", *SMALL[:4])
    assert result.exit_code != 0
    result, _ = run("steady", "--alpha", "1", "--q", "100", *SMALL)
    assert result.exit_code != 0 and "stability check failed" in result.output
    # 6 nodes on [-6, 6]^3 leave L with negative eigenvalues
    result, _ = run("verify-kernel", "--n-v", "6", "--v-max", "6", "--n-omega", "64")
    assert result.exit_code != 0 and "negative eigenvalue" in result.output
