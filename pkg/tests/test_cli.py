import json

import numpy as np
import pytest

from relkal import cli, sim

FAST = {"duration": 1.0, "n_runs": 2}


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_simulate_writes_summary(tmp_path, capsys):
    cfg = write_cfg(tmp_path, FAST)
    out = tmp_path / "out"
    code = cli.main(["simulate", "--config", cfg, "--seed", "42", "--runs", "1", "--out", str(out)])
    assert code == 0
    text = (out / "summary.csv").read_text()
    assert "# seed=42" in text and "# config_hash=" in text
    assert "LRKF,z_L,I,1," in text
    assert "mean_total_error=" in capsys.readouterr().out


def test_overrides_are_echoed(tmp_path):
    cfg = write_cfg(tmp_path, FAST)
    out = tmp_path / "o"
    args = ["simulate", "--config", cfg, "--case", "II", "--filter", "qekf", "--measurement", "zr", "--out", str(out)]
    assert cli.main(args) == 0
    text = (out / "summary.csv").read_text()
    assert "# filter=QEKF" in text and "# measurement=z_R" in text and "# case=II" in text
    assert "\nQEKF,z_R,II,2," in text


def test_simulate_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, {**FAST, "seed": 7})
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", cfg, "--out", str(b), "--threads", "2"]) == 0
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("RELKAL_SEED", "99")
    cfg = write_cfg(tmp_path, FAST)
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert "# seed=99" in (tmp_path / "summary.csv").read_text()
    assert cli.main(["simulate", "--config", cfg, "--seed", "3", "--out", str(tmp_path)]) == 0
    assert "# seed=3" in (tmp_path / "summary.csv").read_text()


def test_per_run_export(tmp_path):
    cfg = write_cfg(tmp_path, {**FAST, "nees": True})
    assert cli.main(["simulate", "--config", cfg, "--per-run", "--out", str(tmp_path)]) == 0
    files = sorted((tmp_path / "runs").glob("*.csv"))
    assert [f.name for f in files] == ["run_00000.csv", "run_00001.csv"]
    lines = files[1].read_text().splitlines()
    assert "# run_index=1" in lines
    assert "t,att_err_deg,vel_err_mps,pos_err_m,combined,nees" in lines
    assert len([l for l in lines if not l.startswith("#")]) == 102


def test_bad_invariant_exits_2_and_writes_nothing(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {**FAST, "dt": 0.03})
    out = tmp_path / "never"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 2
    assert "divide the measurement period" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_key_and_missing_file(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"n_runz": 3})
    assert cli.main(["simulate", "--config", cfg]) == 2
    assert "n_runz" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.json")]) == 2
    assert "not found" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert cli.main(["matrix", "--config", str(bad)]) == 2


def test_config_units_are_degrees(tmp_path):
    raw = {
        "initial_error": {"attitude_deg": [0, 0, 45], "velocity": [0, 0, 0], "position": [1, 0, 0]},
        "sigma_dir_deg": 2.0,
    }
    args = cli.build_parser().parse_args(["simulate"])
    cfg = cli.scenario_from(raw, args)
    assert np.isclose(cfg.initial_error[0][2], np.pi / 4)
    assert np.isclose(cfg.sigma_dir, np.deg2rad(2.0))
    with pytest.raises(cli.CliConfigError, match="initial_error"):
        cli.scenario_from({"initial_error": {"velocity": [0, 0, 0]}}, args)


def test_divergence_only_exit_code(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, FAST)
    real = sim.monte_carlo

    def all_diverged(c, **kw):
        s = real(c, **kw)
        s.diverged[:] = True
        return s

    monkeypatch.setattr(sim, "monte_carlo", all_diverged)
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_matrix_smoke(tmp_path):
    cfg = write_cfg(tmp_path, {"duration": 0.5, "n_runs": 2, "seed": 1})
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["matrix", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["matrix", "--config", cfg, "--out", str(b), "--threads", "3"]) == 0
    summary = (a / "matrix_summary.csv").read_text().splitlines()
    rows = [l for l in summary if not l.startswith("#")]
    assert len(rows) == 19
    assert (a / "matrix_summary.csv").read_bytes() == (b / "matrix_summary.csv").read_bytes()
    plot = (a / "plot_data.csv").read_text()
    assert plot.startswith("# relkal") and "z_R,RRKF,II,RRKF-II," in plot


def test_audit_patterns(capsys):
    assert cli.main(["audit", "vehicle", "--samples", "200", "--seed", "4"]) == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [l["verdict"] for l in lines] == ["pass", "pass", "fail"]
    assert all(l["sample_count"] == 200 for l in lines)
    assert cli.main(["audit", "vehicle", "--samples", "200", "--seed", "4"]) == 0
    again = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert again == lines
    assert cli.main(["audit", "--same-inputs", "--samples", "50"]) == 0
    assert [json.loads(l)["verdict"] for l in capsys.readouterr().out.splitlines()] == ["pass"] * 3


def test_audit_unknown_model():
    assert cli.main(["audit", "rocket"]) == 2


def test_unexpected_audit_pattern(monkeypatch):
    # a checker that suddenly reports R-RTI as holding makes the pattern unexpected
    from relkal import sti

    real = sti.check_r_rti
    monkeypatch.setattr(
        sti, "check_r_rti", lambda d1, d2, s: sti.ConditionReport("R-RTI", 0.0, len(s), 1e-9)
    )
    assert cli.main(["audit", "--samples", "20"]) == 4
    monkeypatch.setattr(sti, "check_r_rti", real)
