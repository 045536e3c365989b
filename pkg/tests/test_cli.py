import json

import pytest

from catalytic_sbm.cli import main

SMALL = """
seed = 11
[[experiment]]
kind = "feller_check"
params = { draws = 2000 }

[[experiment]]
kind = "extinction_curve"
name = "curve"
N = 20
replicates = 40
params = { catalyst = { kind = "constant" }, t_grid = [0.5, 1.0, 2.0] }
"""


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _artifacts(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "timing.json"}


def test_run_is_byte_identical_across_reruns_and_threads(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    a, b = _artifacts(tmp_path / "a"), _artifacts(tmp_path / "b")
    assert a == b and {"manifest.json", "curve.csv", "curve_traces.csv", "feller_check.csv"} <= set(a)
    assert "[PASS]" in capsys.readouterr().out


def test_seed_changes_results(tmp_path):
    cfg = _write(tmp_path, SMALL)
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "12"])
    assert (tmp_path / "a" / "curve_traces.csv").read_bytes() != (tmp_path / "b" / "curve_traces.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["config"]["seed"] == 12


def test_failing_check_gives_exit_one(tmp_path):
    cfg = _write(tmp_path, SMALL.replace("t_grid = [0.5, 1.0, 2.0]", "t_grid = [0.5, 1.0, 2.0], min_final = 0.99"))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["pass"] is False


def test_run_needs_experiments(tmp_path):
    assert main(["run", "--config", _write(tmp_path, "seed = 1\n"), "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit):
        main(["run"])


def test_bad_inputs(tmp_path):
    with pytest.raises(SystemExit):
        main(["run", "--config", "x.toml", "--seed", "-3"])
    with pytest.raises(SystemExit):
        main(["run", "--config", "x.toml", "--replicates", "0"])
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2
    bad = _write(tmp_path, '[[experiment]]\nkind = "nope"\n')
    assert main(["run", "--config", bad]) == 2


def test_validate_subset(tmp_path):
    cfg = _write(tmp_path, '[[experiment]]\nkind = "feller_check"\nparams = { draws = 5000 }\n')
    assert main(["validate", "--config", cfg, "--out", str(tmp_path / "v")]) == 0
    man = json.loads((tmp_path / "v" / "manifest.json").read_text())
    assert [e["name"] for e in man["experiments"]] == ["feller_check"]
    # the suite seed is kept unless overridden
    assert man["config"]["seed"] == 20240601


def test_schedule_requires_constants(tmp_path, capsys):
    cfg = _write(tmp_path, '[schedule]\nmodel = "dense_point"\n')
    assert main(["schedule", "--config", cfg, "--out", str(tmp_path / "s")]) == 2
    assert "needs calibrated" in capsys.readouterr().err
    cfg = _write(tmp_path, '[schedule]\nmodel = "parabolic"\nepsilons = [0.2, 0.1]\n[constants]\nc0_occupation = 1.0\n')
    assert main(["schedule", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    rep = json.loads((tmp_path / "s" / "schedule_report.json").read_text())
    assert rep["report"]["ok"] and (tmp_path / "s" / "schedule_parabolic_eps0.1.csv").exists()


def test_schedule_flags_broken_family(tmp_path):
    cfg = _write(tmp_path, '[schedule]\nmodel = "parabolic"\nbeta = 2.5\nepsilons = [0.2, 0.1]\n'
                           '[constants]\nc0_occupation = 1.0\n')
    assert main(["schedule", "--config", cfg, "--out", str(tmp_path / "s")]) != 0


def test_schedule_from_calibration(tmp_path):
    assert main(["calibrate", "--scale", "0.01", "--seed", "1", "--out", str(tmp_path)]) == 0
    cal = json.loads((tmp_path / "calibration.json").read_text())
    assert set(cal["constants"]) == {"a", "c0_occupation", "c0_hitting", "c1", "alpha_hat"}
    cfg = _write(tmp_path, 'calibration = "calibration.json"\n[schedule]\nmodel = "lattice"\nNs = [4, 8]\n')
    assert main(["schedule", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "schedule_report.json").exists()


def test_pde_command(tmp_path, capsys):
    cfg = _write(tmp_path, '[pde]\nt = 1.0\nh = 0.05\ncatalyst = { kind = "constant", level = 1.0 }\n')
    assert main(["pde", "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    summ = json.loads((tmp_path / "p" / "pde_summary.json").read_text())
    assert summ["extinction_probability"] == pytest.approx(0.3679, abs=1e-3)
    assert (tmp_path / "p" / "pde_field.csv").read_text().startswith("s,b,v")
    cfg = _write(tmp_path, '[pde]\ncatalyst = { kind = "stable", gamma = 0.5 }\n', "bad.toml")
    assert main(["pde", "--config", cfg, "--out", str(tmp_path / "q")]) == 2
