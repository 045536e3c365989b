"""Experiment driver: configuration, per-replicate seeding, statistical checks
and CSV/JSON artifacts."""
from __future__ import annotations

import csv
import json
import math
import os
import platform
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from . import __version__
from .catalyst import (
    DensityCatalyst,
    count_lattice_animals,
    cluster_event,
    max_gap,
    periodic_extension,
    sample_lattice_catalyst,
    sample_stable_catalyst,
    sample_stable_masses,
    stable_constant,
)
from .feller import feller_steps_exact, survival_bound, survival_probability
from .motion import (
    Calibration,
    _loglinear_fit,
    calibrate_a,
    calibrate_alpha_hat,
    calibrate_c0_hitting,
    calibrate_c0_occupation,
    calibrate_c1,
    occupation_fraction_batch,
)
from .particles import (
    classify_good_bad,
    estimate_moments,
    evolve,
    exit_region,
    fixed_time,
    init_population,
    k_level,
    min_of,
    run_replicate,
)
from .pde import extinction_sweep, gap_decay_rate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "Check",
    "ExperimentConfig",
    "RunConfig",
    "ExperimentResult",
    "RunManifest",
    "EXPERIMENTS",
    "REQUIRED_CONSTANTS",
    "MissingConstants",
    "load_config",
    "config_from_dict",
    "replicate_rng",
    "map_replicates",
    "run_experiment",
    "run_all",
    "run_calibration",
    "load_constants",
    "build_catalyst",
    "feller_cdf",
    "exit_survival",
    "expected_stopped_time",
    "ks_mixed",
    "GRID_EXIT_SHIFT",
    "DEFAULT_SUITE",
    "build_schedules",
]

Z_MAX = 3.0
REQUIRED_CONSTANTS = ("a", "c0_occupation", "c0_hitting", "c1", "alpha_hat")
# discretely monitored Brownian exits behave like exits from an interval widened by
# zeta(1/2)/sqrt(2 pi) sqrt(dt) on each side
GRID_EXIT_SHIFT = 0.5825971579390106
# particle steps per replicate; total mass is heavy-tailed (P(sup > M) <= mass/M), so a
# few replicates per thousand need far more work than the mean and must not abort the run
STEP_CAP = 10**9


class MissingConstants(KeyError):
    pass


# ---------------------------------------------------------------------------
# Checks


@dataclass
class Check:
    """One comparison.  ``kind``: ``two_sided`` (|z| <= 3), ``upper``
    (estimate <= target + 3 se), ``lower`` (estimate >= target - 3 se),
    ``at_least``/``at_most`` (thresholds without statistical slack),
    ``strict_lower`` (estimate > target) or ``exact`` (|estimate - target| <=
    tol, deterministic so ``se`` is 0)."""

    name: str
    estimate: float
    se: float
    target: float
    kind: str = "two_sided"
    tol: float = 0.0
    note: str = ""

    @property
    def z(self) -> float:
        d = self.estimate - self.target
        if self.se > 0:
            return d / self.se
        # deterministic comparisons carry the exactness flag instead of a z-score
        return 0.0 if d == 0 else math.nan

    @property
    def passed(self) -> bool:
        e, t, s = self.estimate, self.target, self.se
        if not math.isfinite(e) and self.kind != "upper":
            return False
        if self.kind == "two_sided":
            return abs(self.z) <= Z_MAX
        if self.kind == "upper":
            return e <= t + Z_MAX * s
        if self.kind == "lower":
            return e >= t - Z_MAX * s
        if self.kind == "at_least":
            return e >= t
        if self.kind == "at_most":
            return e <= t
        if self.kind == "strict_lower":
            return e > t
        if self.kind == "exact":
            return abs(e - t) <= self.tol
        raise ValueError(f"unknown check kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "estimate": self.estimate, "se": self.se,
                "target": self.target, "z": self.z, "tol": self.tol, "exact": self.se == 0,
                "pass": self.passed, "note": self.note}

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"[{flag}] {self.name}: estimate={self.estimate:.6g} se={self.se:.3g} "
                f"target={self.target:.6g} z={self.z:+.2f} ({self.kind})")


def _prop(k: int, n: int) -> tuple[float, float]:
    p = k / n
    return p, math.sqrt(max(p * (1 - p), 0.0) / n)


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    kind: str
    name: str = ""
    params: dict = field(default_factory=dict)
    N: int = 500
    replicates: int = 2000
    seed: int = 0
    dt: float = 1e-2
    out_dir: str = "out"
    calibration: str | None = None
    threads: int = 1
    budget_s: float = math.inf

    def __post_init__(self):
        if self.kind not in EXPERIMENTS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; known: {sorted(EXPERIMENTS)}")
        if not self.name:
            self.name = self.kind
        if self.N < 1 or self.replicates < 1:
            raise ValueError("N and replicates must be positive")

    @property
    def stream(self) -> int:
        """Stable stream id derived from the experiment name."""
        return zlib.crc32(self.name.encode())


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "out"
    threads: int = 1
    calibration: str | None = None
    constants: dict = field(default_factory=dict)
    experiments: list[ExperimentConfig] = field(default_factory=list)
    pde: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


_EXP_FIELDS = {"N", "replicates", "dt", "budget_s", "threads"}


def config_from_dict(doc: dict, *, seed: int | None = None, out_dir: str | None = None,
                     replicates: int | None = None, threads: int | None = None) -> RunConfig:
    """Build a run configuration; command-line overrides win over the file."""
    run = RunConfig(
        seed=int(seed if seed is not None else doc.get("seed", 0)),
        out_dir=str(out_dir if out_dir is not None else doc.get("out", "out")),
        threads=int(threads if threads is not None else doc.get("threads", 1)),
        calibration=doc.get("calibration"),
        constants=dict(doc.get("constants", {})),
        pde=dict(doc.get("pde", {})),
        schedule=dict(doc.get("schedule", {})),
        raw=doc,
    )
    if run.seed < 0 or run.seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    for entry in doc.get("experiment", []):
        entry = dict(entry)
        unknown = set(entry) - _EXP_FIELDS - {"kind", "name", "params"}
        if unknown:
            raise ValueError(f"unknown experiment keys {sorted(unknown)}")
        kw = {k: entry[k] for k in _EXP_FIELDS if k in entry}
        if replicates is not None:
            kw["replicates"] = replicates
        kw.setdefault("threads", run.threads)
        if threads is not None:
            kw["threads"] = threads
        run.experiments.append(ExperimentConfig(kind=entry["kind"], name=entry.get("name", ""),
                                                params=dict(entry.get("params", {})), seed=run.seed,
                                                out_dir=run.out_dir, calibration=run.calibration, **kw))
    names = [e.name for e in run.experiments]
    if len(set(names)) != len(names):
        raise ValueError("experiment names must be unique")
    return run


def load_config(path: str, **overrides) -> RunConfig:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    run = config_from_dict(doc, **overrides)
    if run.calibration and not os.path.isabs(run.calibration):
        run.calibration = os.path.join(os.path.dirname(os.path.abspath(path)), run.calibration)
        for e in run.experiments:
            e.calibration = run.calibration
    return run


def load_constants(run: RunConfig, required=REQUIRED_CONSTANTS) -> dict:
    """Calibrated constants from the calibration manifest, overridden by an
    explicit ``[constants]`` table.  Missing constants are an error: there are
    no built-in defaults."""
    consts = {}
    if run.calibration:
        with open(run.calibration) as fh:
            doc = json.load(fh)
        for name, rec in doc.get("constants", {}).items():
            consts[name] = float(rec["value"] if isinstance(rec, dict) else rec)
    consts.update({k: float(v) for k, v in run.constants.items()})
    missing = [k for k in required if k not in consts]
    if missing:
        raise MissingConstants(f"constants {missing} are not calibrated; run `calibrate` or set [constants]")
    return consts


# ---------------------------------------------------------------------------
# Seeding and replicate orchestration


def replicate_rng(seed: int, stream: int, replicate: int) -> np.random.Generator:
    """Independent generator for one replicate, keyed by (seed, stream, index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream, replicate])))


def map_replicates(fn: Callable[[int, np.random.Generator], object], n: int, seed: int, stream: int,
                   threads: int = 1, budget_s: float = math.inf, chunk: int = 64) -> tuple[list, bool]:
    """Run ``fn(i, rng_i)`` for ``i < n``; results come back in index order so
    the output does not depend on ``threads``.  Stops between chunks once the
    budget is spent (the first chunk always runs) and reports whether all
    replicates ran."""
    start = time.perf_counter()
    out = []
    call = lambda i: fn(i, replicate_rng(seed, stream, i))  # noqa: E731
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for lo in range(0, n, chunk):
            if lo and time.perf_counter() - start > budget_s:
                return out, False
            out.extend(pool.map(call, range(lo, min(n, lo + chunk))))
    return out, True


# ---------------------------------------------------------------------------
# Catalysts and initial measures from config tables


def build_catalyst(table: dict, rng: np.random.Generator | None = None):
    """Catalyst from a config table.  Random media (``stable``, ``lattice``)
    are drawn from ``rng``, one per replicate."""
    kind = table.get("kind", "constant")
    if kind == "constant":
        return DensityCatalyst.constant(float(table.get("level", 1.0)))
    if kind == "parabolic":
        return DensityCatalyst.parabolic(float(table.get("q", 2.0)))
    if kind == "gap":
        half = float(table.get("half_width", 1.0))
        return DensityCatalyst.with_gap(-half, half, float(table.get("level", 1.0)))
    if kind == "stable":
        K = float(table.get("K", 4.0))
        cat = sample_stable_catalyst(float(table["gamma"]), (-K, K), float(table.get("weight_floor", 1e-6)),
                                     rng=rng, compensate=bool(table.get("compensate", True)))
        return periodic_extension(cat, K)
    if kind == "lattice":
        return sample_lattice_catalyst(int(table.get("d", 1)), int(table.get("n", 4)), rng)
    raise ValueError(f"unknown catalyst kind {kind!r}")


def _initial(params: dict) -> dict:
    init = dict(params.get("initial", {"mass": 1.0, "kind": "dirac", "at": 0.0}))
    init.setdefault("kind", "dirac")
    return init


# ---------------------------------------------------------------------------
# Closed forms used as targets


def feller_cdf(x, z0: float, r: float, k_max: int | None = None) -> np.ndarray:
    """``P(Z_r <= x | Z_0 = z0)`` for Feller's diffusion: Poisson(z0/r) many
    exponential clusters of mean ``r``."""
    x = np.asarray(x, dtype=float)
    mu = z0 / r
    k_max = k_max or int(mu + 12 * math.sqrt(mu) + 30)
    k = np.arange(1, k_max + 1)
    w = stats.poisson.pmf(k, mu)
    out = math.exp(-mu) + (w[:, None] * stats.gamma.cdf(np.atleast_1d(x)[None, :], k[:, None], scale=r)).sum(0)
    return np.where(x < 0, 0.0, out).reshape(x.shape)


def exit_survival(s, a: float, lo: float, hi: float, n_terms: int = 400) -> np.ndarray:
    """``P(Brownian path from a stays in (lo, hi) up to time s)`` by the sine series."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    L = hi - lo
    k = np.arange(n_terms)
    j = 2 * k + 1
    coef = 4.0 / (np.pi * j) * np.sin(j * np.pi * (a - lo) / L)
    lam = j**2 * np.pi**2 / (2 * L**2)
    return (coef[:, None] * np.exp(-lam[:, None] * s[None, :])).sum(0)


def expected_stopped_time(t: float, a: float, lo: float, hi: float, n_terms: int = 400) -> float:
    """``E[min(t, exit time of (lo, hi))]`` from ``a``."""
    L = hi - lo
    j = 2 * np.arange(n_terms) + 1
    coef = 4.0 / (np.pi * j) * np.sin(j * np.pi * (a - lo) / L)
    lam = j**2 * np.pi**2 / (2 * L**2)
    return float(np.sum(coef * (-np.expm1(-lam * t)) / lam))


def ks_mixed(samples, cdf: Callable) -> tuple[float, float]:
    """Kolmogorov-Smirnov distance and p-value against a CDF that may have atoms.

    The distance is taken over both one-sided limits at every sample point, so
    ties at an atom are compared with the jump rather than with its left edge.
    The p-value uses the continuous null law, which is conservative when the
    CDF has jumps.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    u = np.unique(x)
    upto = np.searchsorted(x, u, side="right") / n
    below = np.searchsorted(x, u, side="left") / n
    F = np.asarray(cdf(u), dtype=float)
    F_left = np.asarray(cdf(np.nextafter(u, -np.inf)), dtype=float)
    d = float(max(np.max(np.abs(upto - F)), np.max(np.abs(below - F_left))))
    return d, float(stats.kstwo.sf(d, n))


# ---------------------------------------------------------------------------
# Results


@dataclass
class ExperimentResult:
    name: str
    kind: str
    checks: list[Check] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)
    complete: bool = True
    wall_s: float = 0.0

    @property
    def passed(self) -> bool:
        return self.complete and all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "complete": self.complete, "pass": self.passed,
                "checks": [c.to_dict() for c in self.checks], "summary": self.summary,
                "artifacts": sorted(self.tables)}


@dataclass
class RunManifest:
    config: dict
    version: str
    constants: dict
    experiments: list[ExperimentResult]
    wall_clock_s: float = 0.0
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.experiments)

    def to_dict(self) -> dict:
        # wall-clock lives in timing.json so that manifest.json is a function of (config, seed)
        return {"config": self.config, "version": self.version,
                "environment": {"python": platform.python_version(), "numpy": np.__version__},
                "constants": self.constants, "experiments": [e.to_dict() for e in self.experiments],
                "pass": self.passed}

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "timing.json"), "w") as fh:
            json.dump({"wall_clock_s": self.wall_clock_s, **self.timings}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for exp in self.experiments:
            for fname, (header, rows) in exp.tables.items():
                with open(os.path.join(out_dir, fname), "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(header)
                    w.writerows([[_fmt(v) for v in row] for row in rows])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# ---------------------------------------------------------------------------
# Experiments


def _extinction_curve(cfg: ExperimentConfig, consts: dict) -> ExperimentResult:
    p = cfg.params
    t_grid = [float(t) for t in p.get("t_grid", [0.5, 1, 2, 4, 8])]
    init = _initial(p)
    cat_spec = p.get("catalyst", {"kind": "parabolic", "q": 2.0})
    random_medium = cat_spec.get("kind") in ("stable", "lattice")
    fixed_cat = None if random_medium else build_catalyst(cat_spec)
    lattice = cat_spec.get("kind") == "lattice"
    eps = float(p.get("eps", 1e-2))

    def one(i, rng):
        cat = build_catalyst(cat_spec, rng) if random_medium else fixed_cat
        return run_replicate(i, cat, init, cfg.N, t_grid, rng, dt=cfg.dt, eps=eps, lattice=lattice, step_cap=STEP_CAP,
                             dim=int(cat_spec.get("d", 1)))

    traces, complete = map_replicates(one, cfg.replicates, cfg.seed, cfg.stream, cfg.threads, cfg.budget_s)
    R = len(traces)
    ext = np.array([[m == 0 for m in tr.total_mass] for tr in traces], dtype=bool).reshape(R, len(t_grid))
    rows, checks = [], []
    probs = []
    for j, t in enumerate(t_grid):
        ph, se = _prop(int(ext[:, j].sum()), R)
        probs.append((ph, se))
        rows.append([t, ph, se, R])
    if p.get("require_increasing", True):
        for j in range(len(t_grid) - 1):
            d, se = _prop(int((ext[:, j + 1] & ~ext[:, j]).sum()), R)
            checks.append(Check(f"extinction increases on ({t_grid[j]:g}, {t_grid[j + 1]:g}]", d, se, 0.0,
                                "strict_lower"))
    if "min_final" in p:
        ph, se = probs[-1]
        checks.append(Check(f"extinction at t={t_grid[-1]:g} at least {p['min_final']}", ph, se,
                            float(p["min_final"]), "at_least"))
    if "max_final" in p:
        ph, se = probs[-1]
        checks.append(Check(f"extinction at t={t_grid[-1]:g} at most {p['max_final']}", ph, se,
                            float(p["max_final"]), "at_most"))
    tables = {f"{cfg.name}.csv": (["t", "p_extinct", "se", "replicates"], rows)}
    trace_rows = [[tr.replicate, t, m, c] for tr in traces for t, m, c in
                  zip(tr.times, tr.total_mass, tr.particle_count)]
    tables[f"{cfg.name}_traces.csv"] = (["replicate", "t", "total_mass", "particle_count"], trace_rows)
    return ExperimentResult(cfg.name, cfg.kind, checks, {"t": t_grid, "p_extinct": [a for a, _ in probs],
                                                         "se": [b for _, b in probs], "replicates": R},
                            tables, complete)


def _feller_check(cfg: ExperimentConfig, consts: dict) -> ExperimentResult:
    p = cfg.params
    cases = [(float(z), float(r)) for z in p.get("z0", [1.0]) for r in p.get("r", [1.0])]
    draws = int(p.get("draws", 10**6))
    checks, rows = [], []
    for idx, (z0, r) in enumerate(cases):
        rng = replicate_rng(cfg.seed, cfg.stream, idx)
        z = feller_steps_exact(np.full(draws, z0), r, rng)
        p0, se0 = _prop(int(np.count_nonzero(z == 0)), draws)
        m = estimate_moments(z)
        target0 = 1.0 - survival_probability(z0, r)
        checks += [
            Check(f"P(Z_{r:g}=0 | Z_0={z0:g})", p0, se0, target0),
            Check(f"E Z_{r:g} (Z_0={z0:g})", m.mean, m.mean_se, z0),
            Check(f"Var Z_{r:g} (Z_0={z0:g})", m.variance, m.variance_se, 2 * z0 * r),
            Check(f"P(Z_{r:g}>0) below z0/r (Z_0={z0:g})", 1 - p0, se0, survival_bound(z0, r), "upper"),
        ]
        rows.append([z0, r, draws, p0, se0, target0, m.mean, m.mean_se, m.variance, m.variance_se])
    header = ["z0", "r", "draws", "p_zero", "se", "p_zero_exact", "mean", "mean_se", "var", "var_se"]
    return ExperimentResult(cfg.name, cfg.kind, checks, {"cases": len(cases)}, {f"{cfg.name}.csv": (header, rows)})


def _localtime_ld(cfg: ExperimentConfig, consts: dict) -> ExperimentResult:
    p = cfg.params
    t_values = [float(t) for t in p.get("t_values", [2.0, 4.0, 6.0, 8.0])]
    thetas = [float(th) for th in p.get("thetas", [0.5])]
    n_paths = int(p.get("n_paths", 20_000))
    dt = float(p.get("dt", 1e-3))
    r2_min = float(p.get("r2_min", 0.9))
    rows, checks = [], []
    idx = 0

    def estimate(theta, t):
        nonlocal idx
        rng = replicate_rng(cfg.seed, cfg.stream, idx)
        idx += 1
        # scaling the step with theta^2 makes the walk identity exact, not only its limit
        occ = occupation_fraction_batch(0.0, -theta, theta, t, dt * theta**2, n_paths, rng)
        return _prop(int(np.count_nonzero(occ >= t / 2)), n_paths)

    base = [estimate(1.0, t) for t in t_values]
    for t, (ph, se) in zip(t_values, base):
        rows.append([1.0, t, t, ph, se, n_paths])
    ps = np.array([b[0] for b in base])
    slope, slope_se, intercept, r2 = _loglinear_fit(t_values, ps, n_paths)
    checks.append(Check("log P(occupation >= t/2) affine in t: R^2", r2, 0.0, r2_min, "strict_lower"))
    checks.append(Check("log P(occupation >= t/2) decreasing in t: slope", slope, slope_se, 0.0, "at_most"))
    for theta in thetas:
        for t1 in t_values:
            t = t1 * theta**2
            ph, se = estimate(theta, t)
            rows.append([theta, t, t1, ph, se, n_paths])
            b, bse = base[t_values.index(t1)]
            checks.append(Check(f"scaling: P(theta={theta:g}, t={t:g}) vs P(1, {t1:g})", ph - b,
                                math.hypot(se, bse), 0.0))
    header = ["theta", "t", "t_over_theta2", "p", "se", "n_paths"]
    summary = {"slope": slope, "slope_se": slope_se, "r2": r2, "c0_estimate": -slope}
    return ExperimentResult(cfg.name, cfg.kind, checks, summary, {f"{cfg.name}.csv": (header, rows)})


def _gap_stats(cfg: ExperimentConfig, consts: dict) -> ExperimentResult:
    p = cfg.params
    gamma = float(p.get("gamma", 0.5))
    beta = float(p.get("beta", 0.5 * gamma * math.log(2)))
    if not 0 < beta < gamma * math.log(2):
        raise ValueError("beta must lie in (0, gamma log 2)")
    K = float(p.get("K", 1.0))
    n_values = [int(n) for n in p.get("n_values", range(10, 31, 2))]
    samples = int(p.get("samples", 1000))
    L = 2 * K
    c_band = stable_constant(gamma)
    rows, checks, freqs = [], [], []
    for idx, n in enumerate(n_values):
        rng = replicate_rng(cfg.seed, cfg.stream, idx)
        lam = c_band * 2.0 ** (gamma * n)
        delta = math.exp(-beta * n)
        hits = 0
        for _ in range(samples):
            k = rng.poisson(lam * L)
            if k == 0:
                hits += 1
                continue
            pts = np.sort(K - L * rng.random(k))
            hits += max_gap(pts, (-K, K), period=L) > delta
        f, se = _prop(hits, samples)
        # union bound: E #(gaps > delta) = lam L e^{-lam delta}, plus an empty circle
        bound = min(1.0, lam * L * math.exp(-lam * delta) + math.exp(-lam * L))
        freqs.append((f, se))
        rows.append([n, lam, delta, f, se, bound, samples])
        checks.append(Check(f"P(max gap > e^(-beta n)) below union bound, n={n}", f, se, bound, "upper"))
    for (n0, (f0, s0)), (n1, (f1, s1)) in zip(zip(n_values, freqs), zip(n_values[1:], freqs[1:])):
        checks.append(Check(f"gap frequency non-increasing n={n0}->{n1}", f1 - f0, math.hypot(s0, s1), 0.0, "upper"))
    n_star = next((n for j, n in enumerate(n_values) if all(f < 0.05 for f, _ in freqs[j:])), None)
    checks.append(Check("frequency below 0.05 from some tested n on", 0.0 if n_star is None else 1.0, 0.0, 1.0,
                        "exact", note=f"n* = {n_star}"))
    header = ["n", "intensity", "delta_n", "freq", "se", "union_bound", "samples"]
    return ExperimentResult(cfg.name, cfg.kind, checks, {"gamma": gamma, "beta": beta, "n_star": n_star},
                            {f"{cfg.name}.csv": (header, rows)})


def _cluster_stats(cfg: ExperimentConfig, consts: dict) -> ExperimentResult:
    p = cfg.params
    d = int(p.get("d", 1))
    n_values = [int(n) for n in p.get("n_values", [1, 2])]
    m_values = [int(m) for m in p.get("m_values", [1, 2])]
    zetas = [float(z) for z in p.get("zetas", [0.25, 0.5])]
    samples = int(p.get("samples", 20_000))
    rows, checks = [], []
    idx = 0
    for n in n_values:
        sites = (2 ** (n + 1) + 1) ** d
        for m in m_values:
            c_hat = count_lattice_animals(m, d)
            for zeta in zetas:
                rng = replicate_rng(cfg.seed, cfg.stream, idx)
                idx += 1
                fails = sum(not cluster_event(sample_lattice_catalyst(d, n, rng), m, zeta) for _ in range(samples))
                f, se = _prop(fails, samples)
                bound = sites * c_hat * zeta**m
                checks.append(Check(f"P(A^c) bound d={d} n={n} m={m} zeta={zeta:g}", f, se, bound, "at_most"))
                exact = math.nan
                if m == 1:
                    exact = 1.0 - (1.0 - zeta) ** sites
                    checks.append(Check(f"P(A^c) exact d={d} n={n} m=1 zeta={zeta:g}", f, se, exact))
                rows.append([d, n, m, zeta, sites, c_hat, f, se, bound, exact, samples])
    header = ["d", "n", "m", "zeta", "sites", "c_hat", "p_fail", "se", "bound", "exact_m1", "samples"]
    return ExperimentResult(cfg.name, cfg.kind, checks, {}, {f"{cfg.name}.csv": (header, rows)})


def _moment_check(cfg: ExperimentConfig, consts: dict) -> ExperimentResult:
    p = cfg.params
    level = float(p.get("level", 1.0))
    t = float(p.get("t", 1.0))
    init = _initial(p)
    mass = float(init.get("mass", 1.0))
    cat = DensityCatalyst.constant(level)
    region = p.get("exit_region")
    stop = fixed_time(t) if region is None else min_of(fixed_time(t), exit_region(tuple(region)))

    def one(i, rng):
        return run_replicate(i, cat, init, cfg.N, [t], rng, dt=cfg.dt, stop=stop, step_cap=STEP_CAP).total_mass[-1]

    vals, complete = map_replicates(one, cfg.replicates, cfg.seed, cfg.stream, cfg.threads, cfg.budget_s)
    m = estimate_moments(vals)
    if region is None:
        k_mean = level * t
    else:
        if init.get("kind", "dirac") != "dirac":
            raise ValueError("stopped moments need a point initial measure")
        k_mean = level * expected_stopped_time(t, float(init.get("at", 0.0)), float(region[0]), float(region[1]))
    checks = [Check("mean of stopped total mass", m.mean, m.mean_se, mass),
              Check("variance of stopped total mass", m.variance, m.variance_se, 2 * mass * k_mean)]
    rows = [[i, v] for i, v in enumerate(vals)]
    summary = {"mean": m.mean, "mean_se": m.mean_se, "variance": m.variance, "variance_se": m.variance_se,
               "variance_target": 2 * mass * k_mean, "replicates": m.n}
    return ExperimentResult(cfg.name, cfg.kind, checks, summary,
                            {f"{cfg.name}.csv": (["replicate", "total_mass"], rows)}, complete)


def _good_bad_stage_check(cfg: ExperimentConfig, consts: dict) -> ExperimentResult:
    p = cfg.params
    xi = float(p.get("xi", 0.5))
    ratios = [float(r) for r in p.get("ratios", [0.2, 0.5])]
    horizon = float(p.get("horizon", 4.0))
    cat = build_catalyst(p.get("catalyst", {"kind": "parabolic", "q": 2.0}))
    at = float(p.get("at", 0.0))
    stop = min_of(fixed_time(horizon), k_level(xi))
    checks, rows = [], []
    for j, ratio in enumerate(ratios):
        init = {"mass": ratio * xi, "kind": "dirac", "at": at}

        def one(i, rng):
            pop = init_population(init, cfg.N, rng)
            evolve(pop, cat, stop, horizon, rng, dt=cfg.dt, step_cap=STEP_CAP)
            good, bad = classify_good_bad(pop, xi)
            return good, bad

        res, complete = map_replicates(one, cfg.replicates, cfg.seed, cfg.stream + j, cfg.threads, cfg.budget_s)
        good = np.array([g for g, _ in res])
        f, se = _prop(int(np.count_nonzero(good > 0)), len(res))
        feller = survival_probability(ratio * xi, xi)
        checks.append(Check(f"P(good mass survives) <= |X_T0|/xi, ratio {ratio:g}", f, se, ratio, "upper"))
        checks.append(Check(f"P(good mass survives) <= Feller survival, ratio {ratio:g}", f, se, feller, "upper"))
        rows.append([ratio, xi, horizon, f, se, feller, ratio, float(good.mean()), len(res)])
    header = ["ratio", "xi", "horizon", "p_good_survives", "se", "feller_survival", "linear_bound",
              "mean_good_mass", "replicates"]
    return ExperimentResult(cfg.name, cfg.kind, checks, {}, {f"{cfg.name}.csv": (header, rows)})


def _nonextinction_control(cfg: ExperimentConfig, consts: dict) -> ExperimentResult:
    p = cfg.params
    half = float(p.get("half_width", 2.0))
    level = float(p.get("level", 1.0))
    t_grid = [float(t) for t in p.get("t_grid", [1, 2, 4, 8])]
    min_survival = float(p.get("min_survival", 0.5))
    cat = DensityCatalyst.with_gap(-half, half, level)
    init = {"mass": float(p.get("mass", 1.0)), "kind": "dirac", "at": 0.0}

    def one(i, rng):
        pop = init_population(init, cfg.N, rng)
        n0 = pop.count
        alive, untouched = [], []
        for t in t_grid:
            evolve(pop, cat, fixed_time(t_grid[-1]), t, rng, dt=cfg.dt, step_cap=STEP_CAP)
            alive.append(pop.count > 0)
            # original particles that never sat on the catalyst at a grid time
            untouched.append(int(np.count_nonzero(pop.clocks == 0.0)))
        return alive, untouched, n0

    res, complete = map_replicates(one, cfg.replicates, cfg.seed, cfg.stream, cfg.threads, cfg.budget_s)
    R = len(res)
    alive = np.array([a for a, _, _ in res], dtype=bool).reshape(R, len(t_grid))
    untouched = np.array([u for _, u, _ in res], dtype=float).reshape(R, len(t_grid))
    n0 = np.array([n for _, _, n in res], dtype=float)
    # grid monitoring sees a slightly wider gap; the rate is charged at step starts, so
    # positions are monitored at 0, dt, ..., t - dt and never at t itself
    eff = half + GRID_EXIT_SHIFT * math.sqrt(cfg.dt)
    exact = exit_survival(np.array(t_grid) - cfg.dt, 0.0, -eff, eff)
    checks, rows = [], []
    fracs = []
    for j, t in enumerate(t_grid):
        s, s_se = _prop(int(alive[:, j].sum()), R)
        frac = untouched[:, j].sum() / n0.sum()
        # ratio estimator over replicates
        resid = untouched[:, j] - frac * n0
        frac_se = math.sqrt(np.sum(resid**2) / (R * (R - 1))) / n0.mean()
        fracs.append(frac)
        checks.append(Check(f"never-catalysed mass fraction at t={t:g}", frac, frac_se, float(exact[j])))
        rows.append([t, s, s_se, frac, frac_se, float(exact[j]), R])
    s_last = rows[-1][1], rows[-1][2]
    checks.append(Check(f"survival at t={t_grid[-1]:g} at least {min_survival:g}", s_last[0], s_last[1],
                        min_survival, "at_least"))
    ok = np.array(fracs) > 0
    rate = float(-np.polyfit(np.array(t_grid)[ok], np.log(np.array(fracs)[ok]), 1)[0]) if ok.sum() >= 2 else math.nan
    summary = {"decay_rate": rate, "dirichlet_eigenvalue": math.pi**2 / (8 * half**2),
               "dirichlet_eigenvalue_grid_corrected": math.pi**2 / (8 * eff**2), "replicates": R}
    header = ["t", "survival", "se", "never_catalysed_fraction", "fraction_se", "exact_fraction", "replicates"]
    return ExperimentResult(cfg.name, cfg.kind, checks, summary, {f"{cfg.name}.csv": (header, rows)}, complete)


def _pde_cross_check(cfg: ExperimentConfig, consts: dict) -> ExperimentResult:
    p = cfg.params
    h = float(p.get("h", 0.01))
    sweep = [float(x) for x in p.get("theta_sweep", [1e2, 1e3, 1e4, 1e5, 1e6])]
    checks, rows = [], []
    one_cat = DensityCatalyst.constant(1.0)
    for t in p.get("closed_form_t", [0.5, 1.0, 2.0]):
        s = extinction_sweep(one_cat, float(t), 0.0, sweep, h=h)
        checks.append(Check(f"chi=1 extinction at t={t:g} equals exp(-1/t)", s.probability, 0.0,
                            math.exp(-1.0 / t), "exact", tol=1e-3))
        rows.append(["constant", t, 0.0, 1.0, s.probability, math.nan, math.nan, math.exp(-1.0 / t)])
    tol = float(p.get("tolerance", 0.05))
    cases = p.get("mc", [{"catalyst": {"kind": "constant", "level": 1.0}, "t": 1.0, "at": 0.0, "mass": 1.0},
                         {"catalyst": {"kind": "parabolic", "q": 2.0}, "t": 1.0, "at": 2.0, "mass": 1.0}])
    summary = {"mc": []}
    complete = True
    for j, case in enumerate(cases):
        cat_spec = case.get("catalyst", {"kind": "parabolic", "q": 2.0})
        cat = build_catalyst(cat_spec)
        t, at, mass = float(case.get("t", 1.0)), float(case.get("at", 0.0)), float(case.get("mass", 1.0))
        s = extinction_sweep(cat, t, at, sweep, h=h)
        p_pde = math.exp(-mass * s.v_inf)
        init = {"mass": mass, "kind": "dirac", "at": at}

        def one(i, rng, cat=cat, init=init, t=t):
            return run_replicate(i, cat, init, cfg.N, [t], rng, dt=cfg.dt, step_cap=STEP_CAP).total_mass[-1] == 0

        res, done = map_replicates(one, cfg.replicates, cfg.seed, cfg.stream + j, cfg.threads, cfg.budget_s)
        complete &= done
        f, se = _prop(int(np.sum(res)), len(res))
        label = f"{cat_spec['kind']} t={t:g} from {mass:g} delta_{at:g}"
        checks.append(Check(f"particle vs PDE extinction, {label}", f, se, p_pde))
        checks.append(Check(f"|particle - PDE| <= {tol:g}, {label}", abs(f - p_pde), se, 0.0, "exact", tol=tol))
        rows.append([cat_spec["kind"], t, at, mass, p_pde, f, se, math.nan])
        summary["mc"].append({"case": label, "v_inf": s.v_inf, "v_inf_err": s.v_inf_err, "p_pde": p_pde,
                              "p_mc": f, "mc_se": se, "replicates": len(res), "sweep": s.to_dict()})
    if p.get("gap_eigenvalue", True):
        g = gap_decay_rate(DensityCatalyst.with_gap(-1.0, 1.0, 1.0), [2.0, 3.0, 4.0])
        target = math.pi**2 / 8
        checks.append(Check("gap decay rate vs pi^2/8 within 5%", g["rate"], 0.0, target, "exact", tol=0.05 * target))
        summary["gap_rate"] = g
    header = ["catalyst", "t", "at", "mass", "p_pde", "p_mc", "mc_se", "closed_form"]
    return ExperimentResult(cfg.name, cfg.kind, checks, summary, {f"{cfg.name}.csv": (header, rows)}, complete)


def _feller_embedding(cfg: ExperimentConfig, consts: dict) -> ExperimentResult:
    p = cfg.params
    t = float(p.get("t", 1.0))
    mass = float(p.get("mass", 1.0))
    tol = float(p.get("tolerance", 0.02))
    p_min = float(p.get("ks_p_min", 0.01))
    cat = DensityCatalyst.constant(1.0)
    init = {"mass": mass, "kind": "dirac", "at": 0.0}

    def one(i, rng):
        return run_replicate(i, cat, init, cfg.N, [t], rng, dt=cfg.dt, step_cap=STEP_CAP).total_mass[-1]

    vals, complete = map_replicates(one, cfg.replicates, cfg.seed, cfg.stream, cfg.threads, cfg.budget_s)
    vals = np.asarray(vals)
    f, se = _prop(int(np.count_nonzero(vals == 0)), vals.size)
    target = math.exp(-mass / t)
    d, pval = ks_mixed(vals, lambda x: feller_cdf(x, mass, t))
    checks = [Check(f"extinction at t={t:g} within {tol:g} of exp(-mass/t)", abs(f - target), se, 0.0, "exact",
                    tol=tol),
              Check(f"extinction at t={t:g} vs exp(-mass/t)", f, se, target),
              Check(f"KS p-value of total mass vs Feller law at t={t:g}", pval, 0.0, p_min, "strict_lower",
                    note=f"D = {d:.4g}")]
    summary = {"p_extinct": f, "se": se, "target": target, "ks_d": d, "ks_p": pval, "replicates": int(vals.size)}
    rows = [[i, v] for i, v in enumerate(vals)]
    return ExperimentResult(cfg.name, cfg.kind, checks, summary,
                            {f"{cfg.name}.csv": (["replicate", "total_mass"], rows)}, complete)


# atoms below the floor are carried by a compensating density where the full range is too costly
STABLE_FLOORS = {0.3: (1e-8, False), 0.5: (1e-8, False), 0.8: (1e-4, True)}


def _stable_laplace(cfg: ExperimentConfig, consts: dict) -> ExperimentResult:
    p = cfg.params
    gammas = [float(g) for g in p.get("gammas", [0.3, 0.5, 0.8])]
    thetas = [float(th) for th in p.get("thetas", [0.5, 1.0, 2.0])]
    samples = int(p.get("samples", 100_000))
    checks, rows = [], []
    for idx, gamma in enumerate(gammas):
        floor, comp = STABLE_FLOORS.get(gamma, (float(p.get("weight_floor", 1e-8)), False))
        rng = replicate_rng(cfg.seed, cfg.stream, idx)
        m = sample_stable_masses(gamma, 1.0, samples, weight_floor=floor, rng=rng, compensate=comp)
        for theta in thetas:
            e = np.exp(-theta * m)
            est, se = float(e.mean()), float(e.std(ddof=1) / math.sqrt(samples))
            target = math.exp(-(theta**gamma))
            checks.append(Check(f"E exp(-theta |Gamma[0,1]|), gamma={gamma:g} theta={theta:g}", est, se, target))
            rows.append([gamma, theta, floor, int(comp), est, se, target, samples])
    header = ["gamma", "theta", "weight_floor", "compensated", "estimate", "se", "exact", "samples"]
    return ExperimentResult(cfg.name, cfg.kind, checks, {}, {f"{cfg.name}.csv": (header, rows)})


EXPERIMENTS: dict[str, Callable[[ExperimentConfig, dict], ExperimentResult]] = {
    "extinction_curve": _extinction_curve,
    "feller_check": _feller_check,
    "localtime_ld": _localtime_ld,
    "gap_stats": _gap_stats,
    "cluster_stats": _cluster_stats,
    "moment_check": _moment_check,
    "good_bad_stage_check": _good_bad_stage_check,
    "nonextinction_control": _nonextinction_control,
    "pde_cross_check": _pde_cross_check,
    "feller_embedding": _feller_embedding,
    "stable_laplace": _stable_laplace,
}


def run_experiment(cfg: ExperimentConfig, consts: dict | None = None) -> ExperimentResult:
    t0 = time.perf_counter()
    res = EXPERIMENTS[cfg.kind](cfg, consts or {})
    res.wall_s = time.perf_counter() - t0
    return res


def run_all(run: RunConfig, *, log: Callable[[str], None] | None = None) -> RunManifest:
    t0 = time.perf_counter()
    consts = {}
    if run.calibration or run.constants:
        consts = load_constants(run, required=())
    results = []
    for cfg in run.experiments:
        res = run_experiment(cfg, consts)
        results.append(res)
        if log:
            for c in res.checks:
                log(f"{cfg.name}: {c.line()}")
            if not res.complete:
                log(f"{cfg.name}: budget exceeded, partial result")
    echo = {"seed": run.seed, "threads_independent": True,
            "experiments": [{k: v for k, v in asdict(e).items() if k not in ("out_dir", "threads", "calibration")}
                            for e in run.experiments]}
    return RunManifest(echo, __version__, consts, results, time.perf_counter() - t0,
                       {r.name: r.wall_s for r in results})


# ---------------------------------------------------------------------------
# Calibration


def run_calibration(seed: int, scale: float = 1.0, *, delta: float = 0.1, alpha_m: int = 2, d: int = 1) -> dict:
    """Fit ``a``, ``c0`` (occupation and hitting forms), ``c1`` and ``alpha_hat``.
    ``scale`` multiplies every path count."""
    n = lambda k: max(200, int(k * scale))  # noqa: E731
    rng = lambda i: replicate_rng(seed, zlib.crc32(b"calibrate"), i)  # noqa: E731
    cals: list[Calibration] = []
    a = calibrate_a(rng(0), n_paths=n(20_000))
    cals.append(a)
    cals.append(calibrate_c0_occupation(rng(1), n_paths=n(10_000)))
    cals.append(calibrate_c0_hitting(rng(2), delta, n_paths=n(20_000)))
    cals.append(calibrate_c1(rng(3), a.value, n_samples=n(5_000)))
    cals.append(calibrate_alpha_hat(rng(4), alpha_m, d, n_walks=n(200_000)))
    return {"seed": seed, "scale": scale, "version": __version__,
            "constants": {c.name: _jsonable(c.to_dict()) for c in cals}}


# ---------------------------------------------------------------------------
# Built-in validation suite and schedule construction

# desk-scale defaults; every entry can be overridden from a config file
DEFAULT_SUITE: dict = {
    "seed": 20240601,
    "experiment": [
        {"kind": "feller_check", "params": {"draws": 1_000_000}},
        {"kind": "feller_embedding", "N": 500, "replicates": 10_000, "dt": 0.1},
        {"kind": "stable_laplace"},
        {"kind": "moment_check", "N": 100, "replicates": 10_000, "dt": 1e-2},
        {"kind": "moment_check", "name": "moment_check_stopped", "N": 100, "replicates": 10_000, "dt": 1e-3,
         "params": {"exit_region": [-1.0, 1.0]}},
        {"kind": "good_bad_stage_check", "N": 500, "replicates": 2000},
        {"kind": "localtime_ld"},
        {"kind": "gap_stats"},
        {"kind": "cluster_stats"},
        {"kind": "extinction_curve", "name": "extinction_model3", "N": 500, "replicates": 2000,
         "params": {"catalyst": {"kind": "parabolic", "q": 2.0}, "initial": {"mass": 0.1, "at": 0.0},
                    "t_grid": [0.5, 1, 2, 4, 8], "min_final": 0.95}},
        {"kind": "nonextinction_control", "N": 500, "replicates": 2000, "params": {"half_width": 2.0}},
        {"kind": "pde_cross_check", "N": 500, "replicates": 2000},
    ],
}

SCHEDULE_CONSTANTS = {"parabolic": ("c0_occupation",), "dense_point": ("a", "c0_hitting", "c1"),
                      "lattice": ("alpha_hat",)}


def build_schedules(table: dict, consts: dict) -> list:
    """One schedule per entry of ``table['epsilons']`` (``table['Ns']`` for the
    lattice model), using calibrated constants only."""
    from .schedules import dense_point_schedule, lattice_schedule, parabolic_schedule

    model = table.get("model", "parabolic")
    if model not in SCHEDULE_CONSTANTS:
        raise ValueError(f"unknown schedule model {model!r}")
    missing = [c for c in SCHEDULE_CONSTANTS[model] if c not in consts]
    if missing:
        raise MissingConstants(f"schedule {model!r} needs calibrated {missing}")
    n_max = int(table.get("n_max", 60))
    if model == "parabolic":
        return [parabolic_schedule(float(table.get("alpha", 1.0)), float(table.get("beta", 1.0)),
                                   float(table.get("q", 2.0)), float(e), consts["c0_occupation"], n_max)
                for e in table.get("epsilons", [0.2, 0.1, 0.05])]
    if model == "dense_point":
        return [dense_point_schedule(float(table.get("alpha", 0.4)), float(table.get("beta", 0.5)), float(e),
                                     int(table.get("N", 0)), consts["a"], consts["c0_hitting"], consts["c1"], n_max)
                for e in table.get("epsilons", [0.2, 0.1, 0.05])]
    return [lattice_schedule(int(N), int(table.get("d", 1)), consts["alpha_hat"], n_max)
            for N in table.get("Ns", [4, 8, 12])]
