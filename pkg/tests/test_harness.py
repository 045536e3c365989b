import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from catalytic_sbm import harness as H
from catalytic_sbm.catalyst import AtomicCatalyst, DensityCatalyst, LatticeCatalyst
from catalytic_sbm.feller import feller_steps_exact


def test_check_kinds():
    assert H.Check("a", 1.0, 0.1, 1.25).passed
    assert not H.Check("a", 1.0, 0.1, 1.35).passed
    assert H.Check("u", 1.2, 0.1, 1.0, "upper").passed and not H.Check("u", 1.4, 0.1, 1.0, "upper").passed
    assert H.Check("l", 0.8, 0.1, 1.0, "lower").passed and not H.Check("l", 0.6, 0.1, 1.0, "lower").passed
    assert not H.Check("s", 0.0, 0.0, 0.0, "strict_lower").passed
    assert H.Check("m", 0.95, 0.01, 0.95, "at_least").passed and not H.Check("m", 0.949, 0.01, 0.95, "at_least").passed
    assert H.Check("m", 0.5, 0.01, 0.5, "at_most").passed and not H.Check("m", 0.51, 0.01, 0.5, "at_most").passed
    ex = H.Check("e", 1.0005, 0.0, 1.0, "exact", tol=1e-3)
    assert ex.passed and math.isnan(ex.z) and ex.to_dict()["exact"]
    assert not H.Check("n", math.nan, 0.1, 0.0).passed
    assert ex.line().startswith("[PASS] e:")
    with pytest.raises(ValueError):
        H.Check("x", 0.0, 1.0, 0.0, "sideways").passed


def test_feller_cdf_matches_sampler():
    z = feller_steps_exact(np.ones(20_000), 0.7, np.random.default_rng(0))
    _, p = H.ks_mixed(z, lambda x: H.feller_cdf(x, 1.0, 0.7))
    assert p > 0.01
    assert H.feller_cdf(0.0, 1.0, 0.7) == pytest.approx(math.exp(-1 / 0.7))
    assert H.feller_cdf(-1.0, 1.0, 0.7) == 0.0
    assert H.feller_cdf(1e3, 1.0, 0.7) == pytest.approx(1.0)


def test_ks_mixed_handles_atoms():
    # half the mass at 0, the rest uniform on (0, 1)
    rng = np.random.default_rng(1)
    x = np.where(rng.random(5000) < 0.5, 0.0, rng.random(5000))
    cdf = lambda u: np.where(u < 0, 0.0, np.minimum(0.5 + 0.5 * u, 1.0))  # noqa: E731
    d, p = H.ks_mixed(x, cdf)
    assert p > 0.01 and d < 0.03
    # scipy's continuous statistic sees the atom as a 0.5 discrepancy
    assert stats.kstest(x, cdf).statistic > 0.4
    _, p_wrong = H.ks_mixed(x, lambda u: np.clip(u, 0, 1))
    assert p_wrong < 1e-10


def test_exit_survival_and_stopped_time():
    assert H.exit_survival(1e-6, 0.0, -1, 1)[0] == pytest.approx(1.0, abs=1e-3)
    s = H.exit_survival([1.0, 2.0, 4.0], 0.0, -1, 1)
    assert np.all(np.diff(s) < 0)
    # large s: leading mode (4/pi) exp(-pi^2 s / 8)
    assert s[-1] == pytest.approx(4 / math.pi * math.exp(-math.pi**2 / 2), rel=1e-6)
    # E tau = (a - lo)(hi - a) for generator (1/2) d^2/dx^2
    assert H.expected_stopped_time(100.0, 0.3, -1, 1) == pytest.approx(1.3 * 0.7, rel=1e-6)
    # E[min(t, tau)] = int_0^t P(tau > s) ds
    direct, _ = integrate.quad(lambda u: H.exit_survival(u, 0.3, -1, 1)[0], 0, 0.8)
    assert H.expected_stopped_time(0.8, 0.3, -1, 1) == pytest.approx(direct, rel=1e-6)


def test_replicate_streams():
    a = H.replicate_rng(1, 2, 3).random(4)
    assert np.array_equal(a, H.replicate_rng(1, 2, 3).random(4))
    assert not np.array_equal(a, H.replicate_rng(1, 2, 4).random(4))
    assert not np.array_equal(a, H.replicate_rng(1, 3, 3).random(4))


def test_map_replicates_is_thread_independent():
    fn = lambda i, rng: (i, float(rng.random()))  # noqa: E731
    one, done1 = H.map_replicates(fn, 200, 7, 11, threads=1, chunk=16)
    four, done4 = H.map_replicates(fn, 200, 7, 11, threads=4, chunk=16)
    assert one == four and done1 and done4
    assert [i for i, _ in one] == list(range(200))
    partial, done = H.map_replicates(fn, 200, 7, 11, budget_s=-1.0, chunk=16)
    assert partial == one[:16] and not done


def test_config_from_dict():
    doc = {"seed": 5, "out": "o", "experiment": [{"kind": "feller_check", "N": 10, "params": {"draws": 10}}]}
    run = H.config_from_dict(doc, replicates=3, threads=2)
    e = run.experiments[0]
    assert run.seed == 5 and e.N == 10 and e.replicates == 3 and e.threads == 2 and e.name == "feller_check"
    assert H.config_from_dict(doc, seed=9).experiments[0].seed == 9
    with pytest.raises(ValueError):
        H.config_from_dict({"experiment": [{"kind": "feller_check", "bogus": 1}]})
    with pytest.raises(ValueError):
        H.config_from_dict({"experiment": [{"kind": "nope"}]})
    with pytest.raises(ValueError):
        H.config_from_dict({"experiment": [{"kind": "feller_check"}, {"kind": "feller_check"}]})
    with pytest.raises(ValueError):
        H.config_from_dict({"seed": -1})
    # distinct names give distinct streams
    assert H.ExperimentConfig("gap_stats", "x").stream != H.ExperimentConfig("gap_stats", "y").stream


def test_load_config_resolves_calibration(tmp_path):
    (tmp_path / "c.toml").write_text('seed = 3\ncalibration = "cal.json"\n[[experiment]]\nkind = "gap_stats"\n')
    run = H.load_config(str(tmp_path / "c.toml"))
    assert run.calibration == str(tmp_path / "cal.json")
    assert run.experiments[0].calibration == run.calibration


def test_load_constants(tmp_path):
    cal = tmp_path / "cal.json"
    cal.write_text(json.dumps({"constants": {"a": {"value": 0.4}, "c1": {"value": 2.0}}}))
    run = H.RunConfig(calibration=str(cal), constants={"c1": 3.0})
    assert H.load_constants(run, required=("a", "c1")) == {"a": 0.4, "c1": 3.0}
    with pytest.raises(H.MissingConstants):
        H.load_constants(run)
    with pytest.raises(H.MissingConstants):
        H.build_schedules({"model": "lattice"}, {})


def test_build_schedules_uses_given_constants():
    scheds = H.build_schedules({"model": "parabolic", "epsilons": [0.2, 0.1]}, {"c0_occupation": 1.0})
    assert [s.epsilon for s in scheds] == [0.2, 0.1]
    with pytest.raises(ValueError):
        H.build_schedules({"model": "wavy"}, {})


def test_build_catalyst_kinds():
    rng = np.random.default_rng(2)
    assert H.build_catalyst({"kind": "constant", "level": 2.0}) == DensityCatalyst.constant(2.0)
    assert H.build_catalyst({"kind": "gap", "half_width": 2.0}).gap == (-2.0, 2.0)
    st = H.build_catalyst({"kind": "stable", "gamma": 0.5, "K": 1.0, "weight_floor": 1e-3}, rng)
    assert isinstance(st, AtomicCatalyst) and st.period == 2.0
    assert isinstance(H.build_catalyst({"kind": "lattice", "d": 1, "n": 2}, rng), LatticeCatalyst)
    with pytest.raises(ValueError):
        H.build_catalyst({"kind": "wavy"})


def _small(kind, **kw):
    return H.run_experiment(H.ExperimentConfig(kind, seed=3, **kw))


def test_small_experiments_pass():
    for res in [
        _small("feller_check", params={"draws": 20_000}),
        _small("moment_check", N=50, replicates=500, dt=0.05),
        _small("cluster_stats", params={"samples": 2000}),
        _small("gap_stats", params={"samples": 200, "n_values": [24, 26, 28]}),
        _small("stable_laplace", params={"samples": 5000, "gammas": [0.5]}),
        _small("feller_embedding", N=50, replicates=500, dt=0.5),
    ]:
        assert res.passed, [c.line() for c in res.checks if not c.passed]
        assert res.tables


def test_extinction_curve_small():
    res = _small("extinction_curve", N=50, replicates=100, params={"catalyst": {"kind": "constant"},
                                                                    "t_grid": [0.5, 1.0, 2.0], "max_final": 0.9})
    assert res.passed and len(res.summary["p_extinct"]) == 3
    header, rows = res.tables["extinction_curve.csv"]
    assert header[0] == "t" and len(rows) == 3


def test_budget_marks_incomplete():
    res = _small("moment_check", N=20, replicates=500, budget_s=-1.0)
    assert not res.complete and not res.passed


def test_run_all_writes_deterministic_manifest(tmp_path):
    doc = {"seed": 4, "experiment": [{"kind": "feller_check", "params": {"draws": 1000}},
                                     {"kind": "moment_check", "N": 20, "replicates": 64, "dt": 0.1}]}
    out = []
    for threads, d in ((1, "a"), (3, "b")):
        run = H.config_from_dict(doc, out_dir=str(tmp_path / d), threads=threads)
        m = H.run_all(run)
        m.write(run.out_dir)
        out.append({f: (tmp_path / d / f).read_bytes() for f in ("manifest.json", "feller_check.csv",
                                                                   "moment_check.csv")})
    assert out[0] == out[1]
    man = json.loads(out[0]["manifest.json"])
    assert man["config"]["seed"] == 4 and "wall_clock_s" not in man
    assert json.loads((tmp_path / "a" / "timing.json").read_text())["wall_clock_s"] >= 0


def test_jsonable():
    assert H._jsonable({"x": np.float64(math.inf), "y": np.int64(2), "z": np.array([1.0])}) == \
        {"x": "inf", "y": 2, "z": [1.0]}
