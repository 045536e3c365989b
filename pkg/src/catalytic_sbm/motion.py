"""Reactant motion: Brownian paths on R, continuous-time simple random walk on
Z^d, and the path statistics built on them (eps-local time, occupation time,
first hits, exits, the hit-then-collect cycle and constant calibration)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np
from scipy import integrate, stats

__all__ = [
    "Path",
    "JumpPath",
    "Interval",
    "Cube",
    "SiteSet",
    "WHOLE_SPACE",
    "brownian_path",
    "brownian_paths",
    "local_time",
    "local_time_curve",
    "occupation_time",
    "first_hit",
    "random_walk_path",
    "jump_count",
    "exit_time",
    "exit_times_batch",
    "occupation_fraction_batch",
    "hitting_cycle",
    "HittingCycle",
    "poisson_tail",
    "walk_distance_bound",
    "calibrate_a",
    "calibrate_c0_occupation",
    "calibrate_c0_hitting",
    "calibrate_c1",
    "calibrate_alpha_hat",
    "chain_event_probability",
    "Calibration",
    "dump_path_csv",
]


# ---------------------------------------------------------------------------
# Paths and regions


@dataclass(frozen=True)
class Path:
    """Brownian path sampled on a uniform grid: ``positions[k] = W(t0 + k*dt)``."""

    t0: float
    dt: float
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1)
        if pos.size < 1:
            raise ValueError("a path needs at least one position")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def a(self) -> float:
        return float(self.positions[0])

    @property
    def n_steps(self) -> int:
        return self.positions.size - 1

    @property
    def t1(self) -> float:
        return self.t0 + self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.positions.size)


@dataclass(frozen=True)
class JumpPath:
    """Piecewise-constant lattice path with exact jump times.

    ``jump_times[k]`` is the time of the k-th jump, after which the walk sits at
    ``sites[k + 1]``; ``sites[0]`` is the start site.
    """

    t0: float
    t_end: float
    sites: np.ndarray  # shape (n_jumps + 1, d)
    jump_times: np.ndarray  # shape (n_jumps,)

    def __post_init__(self):
        sites = np.asarray(self.sites, dtype=np.int64)
        if sites.ndim == 1:
            sites = sites[:, None]
        jt = np.asarray(self.jump_times, dtype=float).reshape(-1)
        if sites.shape[0] != jt.size + 1:
            raise ValueError("need exactly one more site than jump times")
        if jt.size:
            if np.any(np.diff(jt) <= 0) or jt[0] <= self.t0 or jt[-1] > self.t_end:
                raise ValueError("jump times must be strictly increasing inside (t0, t_end]")
            if np.any(np.abs(np.diff(sites, axis=0)).sum(axis=1) != 1):
                raise ValueError("consecutive sites must be nearest neighbours")
        sites.setflags(write=False)
        jt.setflags(write=False)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "jump_times", jt)

    @property
    def dim(self) -> int:
        return self.sites.shape[1]

    @property
    def start(self) -> tuple[int, ...]:
        return tuple(int(s) for s in self.sites[0])

    def holding_intervals(self) -> tuple[np.ndarray, np.ndarray]:
        """(start, end) time of every holding interval, aligned with ``sites``."""
        starts = np.concatenate([[self.t0], self.jump_times])
        ends = np.concatenate([self.jump_times, [self.t_end]])
        return starts, ends

    def site_at(self, t: float) -> tuple[int, ...]:
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        return tuple(int(s) for s in self.sites[k])


@dataclass(frozen=True)
class Interval:
    """Closed interval ``[lo, hi]`` of R (infinite ends allowed)."""

    lo: float
    hi: float

    def contains(self, x):
        x = np.asarray(x)
        return (x >= self.lo) & (x <= self.hi)


@dataclass(frozen=True)
class Cube:
    """Lattice cube ``{b in Z^d: max_i |b_i| <= radius}``."""

    radius: int

    @classmethod
    def D(cls, n: int) -> "Cube":
        return cls(1 << n)

    def contains_sites(self, sites: np.ndarray) -> np.ndarray:
        return np.abs(np.atleast_2d(sites)).max(axis=1) <= self.radius


@dataclass(frozen=True)
class SiteSet:
    sites: frozenset

    @classmethod
    def of(cls, sites) -> "SiteSet":
        return cls(frozenset(tuple(int(c) for c in np.atleast_1d(s)) for s in sites))

    def contains_sites(self, sites: np.ndarray) -> np.ndarray:
        return np.array([tuple(int(c) for c in s) in self.sites for s in np.atleast_2d(sites)], dtype=bool)


WHOLE_SPACE = Interval(-math.inf, math.inf)


# ---------------------------------------------------------------------------
# Brownian sampling


def _grid(t0: float, t1: float, dt: float) -> tuple[int, float]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    n = max(1, math.ceil((t1 - t0) / dt - 1e-9))
    return n, (t1 - t0) / n


def brownian_path(a: float, t0: float, t1: float, dt: float, rng: np.random.Generator) -> Path:
    """Exact Gaussian increments on a uniform grid covering ``[t0, t1]``.

    The step is shrunk to ``(t1 - t0) / ceil((t1 - t0) / dt)`` so the grid ends
    exactly at ``t1``.
    """
    n, h = _grid(t0, t1, dt)
    pos = np.empty(n + 1)
    pos[0] = a
    np.cumsum(rng.standard_normal(n) * math.sqrt(h), out=pos[1:])
    pos[1:] += a
    return Path(t0, h, pos)


def brownian_paths(a, t0: float, t1: float, dt: float, n_paths: int, rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Batch of independent paths as an array of shape ``(n_paths, n_steps + 1)``."""
    n, h = _grid(t0, t1, dt)
    out = np.empty((n_paths, n + 1))
    out[:, 0] = a
    np.cumsum(rng.standard_normal((n_paths, n)) * math.sqrt(h), axis=1, out=out[:, 1:])
    out[:, 1:] += out[:, :1]
    return h, out


# ---------------------------------------------------------------------------
# Local time and occupation


def _trapezoid_time(inside: np.ndarray, dt: float) -> float:
    if inside.size < 2:
        return 0.0
    ind = inside.astype(float)
    return dt * (ind.sum() - 0.5 * (ind[0] + ind[-1]))


def local_time(path: Path, b: float, eps: float) -> float:
    """``(1 / 2eps) * time spent in [b - eps, b + eps)`` (trapezoidal on the grid).

    The band is half-open so that adjacent bands tile R and the bin sum of
    ``2 eps * local_time`` equals the path duration exactly.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = path.positions
    inside = (x >= b - eps) & (x < b + eps)
    return _trapezoid_time(inside, path.dt) / (2.0 * eps)


def local_time_curve(path: Path, b: float, eps: float) -> np.ndarray:
    """Running eps-local time at ``b`` on the path grid (starts at 0)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = path.positions
    ind = ((x >= b - eps) & (x < b + eps)).astype(float)
    out = np.zeros(x.size)
    np.cumsum(0.5 * path.dt * (ind[:-1] + ind[1:]), out=out[1:])
    return out / (2.0 * eps)


def occupation_time(path: Path | JumpPath, region) -> float:
    """Total time spent in ``region``; exact from holding intervals for jump paths."""
    if isinstance(path, JumpPath):
        starts, ends = path.holding_intervals()
        if isinstance(region, Interval) and region == WHOLE_SPACE:
            return float(path.t_end - path.t0)
        inside = region.contains_sites(path.sites)
        return float(np.sum((ends - starts)[inside]))
    if isinstance(region, Interval):
        if region == WHOLE_SPACE:
            return float(path.t1 - path.t0)
        return _trapezoid_time(region.contains(path.positions), path.dt)
    raise TypeError("Brownian paths need an Interval region")


# ---------------------------------------------------------------------------
# Hitting


def _bracketing(x0, x1, targets):
    lo = np.minimum(x0, x1)
    hi = np.maximum(x0, x1)
    i_lo = np.searchsorted(targets, lo, side="left")
    i_hi = np.searchsorted(targets, hi, side="right")
    return i_hi > i_lo, i_lo, i_hi


def _first_hit_index(path: Path, targets: np.ndarray, from_time: float, bridge: bool, rng):
    """Return (grid index of hit, index of target hit) or None."""
    targets = np.asarray(targets, dtype=float)
    if targets.size == 0:
        return None
    x = path.positions
    k0 = max(0, math.ceil((from_time - path.t0) / path.dt - 1e-9))
    if k0 >= x.size:
        return None
    j = int(np.searchsorted(targets, x[k0]))
    if j < targets.size and targets[j] == x[k0]:
        return k0, j
    x0, x1 = x[k0:-1], x[k0 + 1:]
    if x0.size == 0:
        return None
    hit, i_lo, i_hi = _bracketing(x0, x1, targets)
    if bridge:
        if rng is None:
            raise ValueError("bridge mode needs an rng")
        # chance that the bridge touches the nearest target outside the segment
        p = np.zeros(x0.size)
        below = i_lo - 1
        above = i_hi
        ok = below >= 0
        tb = targets[np.clip(below, 0, None)]
        p += np.where(ok, np.exp(-2.0 * (x0 - tb) * (x1 - tb) / path.dt), 0.0)
        ok = above < targets.size
        ta = targets[np.clip(above, None, targets.size - 1)]
        p += np.where(ok, np.exp(-2.0 * (ta - x0) * (ta - x1) / path.dt), 0.0)
        extra = (~hit) & (rng.random(x0.size) < p)
        hit = hit | extra
    idx = np.flatnonzero(hit)
    if idx.size == 0:
        return None
    s = int(idx[0])
    a, b = x0[s], x1[s]
    lo_i, hi_i = int(i_lo[s]), int(i_hi[s])
    if hi_i > lo_i:
        tgt = lo_i if b >= a else hi_i - 1  # first target crossed
    else:
        # bridge excursion: pick the nearer outside target
        cands = [c for c in (lo_i - 1, hi_i) if 0 <= c < targets.size]
        tgt = min(cands, key=lambda c: abs(targets[c] - a))
    return k0 + s + 1, tgt


def first_hit(path: Path, targets, from_time: float | None = None, *, bridge: bool = False,
              rng: np.random.Generator | None = None) -> float | None:
    """First grid time ``>= from_time`` at which the path touches a target.

    Returns the grid time ``t_k`` when ``positions[k]`` equals a target, else
    the right end ``t_{k+1}`` of the first segment bracketing a target.  With
    ``bridge=True`` segments that do not bracket a target still count as a hit
    with the Brownian-bridge crossing probability of the nearest targets,
    which removes the late bias of plain bracketing.
    """
    from_time = path.t0 if from_time is None else from_time
    res = _first_hit_index(path, targets, from_time, bridge, rng)
    if res is None:
        return None
    return float(path.t0 + res[0] * path.dt)


# ---------------------------------------------------------------------------
# Random walk


def random_walk_path(a, t0: float, t1: float, rng: np.random.Generator) -> JumpPath:
    """Continuous-time simple random walk: Exp(1) holding times, uniform
    nearest-neighbour moves."""
    if t1 < t0:
        raise ValueError("need t1 >= t0")
    start = np.atleast_1d(np.asarray(a, dtype=np.int64))
    d = start.size
    n = rng.poisson(t1 - t0)
    times = np.sort(t0 + (t1 - t0) * rng.random(n))
    # a.s. distinct; guard against ties or an endpoint draw anyway
    while n and (np.any(np.diff(times) <= 0) or times[0] <= t0):
        times = np.sort(t0 + (t1 - t0) * rng.random(n))
    axis = rng.integers(0, d, size=n)
    sign = rng.integers(0, 2, size=n) * 2 - 1
    steps = np.zeros((n, d), dtype=np.int64)
    steps[np.arange(n), axis] = sign
    sites = np.vstack([start[None, :], start[None, :] + np.cumsum(steps, axis=0)])
    return JumpPath(t0, t1, sites, times)


def jump_count(path: JumpPath, t: float | None = None) -> int:
    """Number of jumps in ``(t0, t]`` (default: whole path)."""
    if t is None:
        return int(path.jump_times.size)
    return int(np.searchsorted(path.jump_times, t, side="right"))


def poisson_tail(k: int, t: float) -> float:
    """Exact ``P(J_t >= k)`` for the jump count of the walk."""
    return float(stats.poisson.sf(k - 1, t))


def walk_distance_bound(t: float, k: int) -> float:
    """Stirling-type bound ``(t e / k)^k (2 pi k)^{-1/2}`` on ``P(J_t >= k)``."""
    return (t * math.e / k) ** k / math.sqrt(2.0 * math.pi * k)


# ---------------------------------------------------------------------------
# Exit times


def exit_time(path: Path | JumpPath, region) -> float | None:
    """First recorded time strictly outside ``region``; None if confined."""
    if isinstance(path, JumpPath):
        if isinstance(region, Interval) and region == WHOLE_SPACE:
            return None
        inside = region.contains_sites(path.sites)
        if not inside[0]:
            raise ValueError("path starts outside the region")
        out = np.flatnonzero(~inside)
        return None if out.size == 0 else float(path.jump_times[out[0] - 1])
    if not isinstance(region, Interval):
        raise TypeError("Brownian paths need an Interval region")
    if region == WHOLE_SPACE:
        return None
    inside = region.contains(path.positions)
    if not inside[0]:
        raise ValueError("path starts outside the region")
    out = np.flatnonzero(~inside)
    return None if out.size == 0 else float(path.t0 + out[0] * path.dt)


@nb.njit(cache=True, error_model="numpy")
def _exit_batch(a, lo, hi, dt, t_max, n_paths, rng):
    out = np.empty(n_paths)
    sd = math.sqrt(dt)
    n_max = int(math.ceil(t_max / dt))
    for p in range(n_paths):
        x = a
        res = np.inf
        for k in range(1, n_max + 1):
            x += sd * rng.standard_normal()
            if x <= lo or x >= hi:
                res = k * dt
                break
        out[p] = res
    return out


def exit_times_batch(a: float, lo: float, hi: float, dt: float, t_max: float, n_paths: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Exit times of ``(lo, hi)`` for many Brownian paths from ``a`` (grid
    detection); ``inf`` marks paths still inside at ``t_max``."""
    if not lo < a < hi:
        raise ValueError("start must lie inside the interval")
    return _exit_batch(float(a), float(lo), float(hi), float(dt), float(t_max), int(n_paths), rng)


@nb.njit(cache=True, error_model="numpy")
def _occupation_batch(a, lo, hi, dt, n_steps, n_paths, rng):
    out = np.empty(n_paths)
    sd = math.sqrt(dt)
    for p in range(n_paths):
        x = a
        prev = 1.0 if lo <= x <= hi else 0.0
        acc = 0.0
        for _ in range(n_steps):
            x += sd * rng.standard_normal()
            cur = 1.0 if lo <= x <= hi else 0.0
            acc += 0.5 * (prev + cur)
            prev = cur
        out[p] = acc * dt
    return out


def occupation_fraction_batch(a: float, lo: float, hi: float, t: float, dt: float, n_paths: int,
                              rng: np.random.Generator) -> np.ndarray:
    """Occupation time of ``[lo, hi]`` up to ``t`` for many paths from ``a``."""
    n, h = _grid(0.0, t, dt)
    return _occupation_batch(float(a), float(lo), float(hi), h, n, int(n_paths), rng)


# ---------------------------------------------------------------------------
# Hit-then-collect cycle


@dataclass
class HittingCycle:
    H: list[float] = field(default_factory=list)
    L: list[float] = field(default_factory=list)
    sites: list[float] = field(default_factory=list)
    truncated: bool = False


def hitting_cycle(path: Path, targets, s: float, m_count: int, eps: float) -> HittingCycle:
    """Alternate ``m_count`` times: wait for the first hit of a target (delay
    ``H_m``), then record the eps-local time ``L_m`` at the hit target over the
    next ``s`` time units.  The next cycle starts ``s`` after the hit."""
    if not s > 0 or m_count < 1:
        raise ValueError("need s > 0 and m_count >= 1")
    targets = np.sort(np.asarray(targets, dtype=float))
    out = HittingCycle()
    kappa = path.t0
    x = path.positions
    n_win = int(round(s / path.dt))
    for _ in range(m_count):
        res = _first_hit_index(path, targets, kappa, False, None)
        if res is None:
            out.truncated = True
            break
        k_hit, j = res
        if k_hit + n_win > path.n_steps:
            out.truncated = True
            break
        b = targets[j]
        seg = x[k_hit:k_hit + n_win + 1]
        inside = (seg >= b - eps) & (seg < b + eps)
        out.H.append(float(path.t0 + k_hit * path.dt - kappa))
        out.L.append(_trapezoid_time(inside, path.dt) / (2.0 * eps))
        out.sites.append(float(b))
        kappa = path.t0 + (k_hit + n_win) * path.dt
    return out


# ---------------------------------------------------------------------------
# Calibration


@dataclass
class Calibration:
    """A fitted constant with its standard error and fit diagnostics."""

    name: str
    value: float
    se: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "se": self.se, **self.details}


@nb.njit(cache=True, error_model="numpy")
def _sup_batch(dt, n_steps, n_paths, rng):
    out = np.empty(n_paths)
    sd = math.sqrt(dt)
    for p in range(n_paths):
        x = 0.0
        m = 0.0
        for _ in range(n_steps):
            x += sd * rng.standard_normal()
            if x > m:
                m = x
        out[p] = m
    return out


def sup_batch(t: float, dt: float, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    """``max_{k} W(k dt)`` over ``[0, t]`` for many paths from 0."""
    n, h = _grid(0.0, t, dt)
    return _sup_batch(h, n, int(n_paths), rng)


# E sup of the discrete walk undershoots by zeta(1/2)/sqrt(2 pi) * sqrt(dt)
_SUP_GRID_SHIFT = 0.5825971579390106


def calibrate_a(rng: np.random.Generator, n_paths: int = 20_000, dt: float = 1e-3,
                correct_grid: bool = True) -> Calibration:
    """Estimate ``a = E sup_{[0,1]} W / 2`` (also half the mean local time at 0
    up to time 1).  The grid maximum is shifted by the known overshoot term
    ``-zeta(1/2) sqrt(dt / 2 pi)`` when ``correct_grid`` is set."""
    sup = sup_batch(1.0, dt, n_paths, rng)
    if correct_grid:
        sup = sup + _SUP_GRID_SHIFT * math.sqrt(dt)
    mean = float(sup.mean())
    se = float(sup.std(ddof=1) / math.sqrt(sup.size))
    return Calibration("a", 0.5 * mean, 0.5 * se, {"dt": dt, "n_paths": n_paths, "exact": 1.0 / math.sqrt(2.0 * math.pi)})


def _loglinear_fit(x, p, n):
    """Weighted least squares of log p on x; returns slope, its se, intercept, R^2."""
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    if np.any(p <= 0):
        raise ValueError("all probabilities must be positive for a log-linear fit")
    y = np.log(p)
    # delta-method variance of log p_hat
    w = n * p / (1.0 - p)
    W = w.sum()
    xm = (w * x).sum() / W
    ym = (w * y).sum() / W
    sxx = (w * (x - xm) ** 2).sum()
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ss_tot = (w * (y - ym) ** 2).sum()
    r2 = 1.0 - (w * resid**2).sum() / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(math.sqrt(1.0 / sxx)), float(intercept), float(r2)


def calibrate_c0_occupation(rng: np.random.Generator, t_values: Sequence[float] = (4.0, 6.0, 8.0),
                            theta: float = 1.0, n_paths: int = 10_000, dt: float = 1e-3) -> Calibration:
    """Fit ``P(occupation of [-theta, theta] by t >= t/2) ~ C exp(-c0 t / theta^2)``.

    Returns ``c0 = -slope * theta^2`` with the fitted probabilities, slope and
    ``R^2`` in ``details``.
    """
    probs = []
    for t in t_values:
        occ = occupation_fraction_batch(0.0, -theta, theta, t, dt, n_paths, rng)
        probs.append(float(np.mean(occ >= t / 2.0)))
    slope, se, intercept, r2 = _loglinear_fit(t_values, probs, n_paths)
    return Calibration("c0_occupation", -slope * theta**2, se * theta**2,
                       {"t": list(map(float, t_values)), "p": probs, "slope": slope,
                        "intercept": intercept, "r2": r2, "theta": theta, "dt": dt, "n_paths": n_paths})


def calibrate_c0_hitting(rng: np.random.Generator, delta: float, s_values: Sequence[float] | None = None,
                         n_paths: int = 20_000, dt: float | None = None) -> Calibration:
    """Fit ``P(H >= s) ~ C exp(-c0 s / delta^2)`` for targets spaced ``delta``
    apart, starting midway between two targets.  Exact value ``pi^2 / 2``."""
    dt = delta**2 * 1e-3 if dt is None else dt
    if s_values is None:
        s_values = delta**2 * np.array([0.3, 0.45, 0.6])
    s_values = np.asarray(s_values, float)
    tau = exit_times_batch(0.5 * delta, 0.0, delta, dt, float(s_values.max()) + dt, n_paths, rng)
    probs = [float(np.mean(tau >= s)) for s in s_values]
    slope, se, intercept, r2 = _loglinear_fit(s_values, probs, n_paths)
    return Calibration("c0_hitting", -slope * delta**2, se * delta**2,
                       {"delta": delta, "s": s_values.tolist(), "p": probs, "slope": slope, "r2": r2,
                        "dt": dt, "exact": math.pi**2 / 2.0})


def calibrate_c1(rng: np.random.Generator, a: float, k_values: Sequence[int] = (20, 40),
                 n_samples: int = 20_000, dt: float = 1e-3) -> Calibration:
    """Fit ``c1`` in ``P(sum_{m<=k} S_m < a k) <= exp(-2 c1 k)`` where ``S_m``
    are i.i.d. copies of ``sup_{[0,1]} W`` (the law of the rescaled collected
    local time).  The estimate is the smallest per-k exponent, so the bound
    holds at every tested k by construction."""
    k_values = [int(k) for k in k_values]
    kmax = max(k_values)
    sup = sup_batch(1.0, dt, n_samples * kmax, rng) + _SUP_GRID_SHIFT * math.sqrt(dt)
    sup = sup.reshape(n_samples, kmax)
    exps, probs = [], []
    for k in k_values:
        p = float(np.mean(sup[:, :k].sum(axis=1) < a * k))
        probs.append(p)
        # a zero count is replaced by the rule-of-three upper bound
        p_eff = p if p > 0 else 3.0 / n_samples
        exps.append(-math.log(p_eff) / (2.0 * k))
    c1 = float(min(exps))
    return Calibration("c1", c1, float("nan"), {"k": k_values, "p": probs, "a": a, "n_samples": n_samples})


def chain_event_probability(m: int, d: int) -> float:
    """Probability that the walk on Z^d follows a prescribed nearest-neighbour
    chain of ``m`` steps, completes it before time 1/2 and then holds still
    until time 1.  This lower-bounds ``8 alpha`` in the low-cluster probability bound."""
    if m < 0 or d < 1:
        raise ValueError("need m >= 0 and d >= 1")
    if m == 0:
        return math.exp(-1.0)
    # density of the m-th jump time is Gamma(m, 1); then no jump on (s, 1]
    val, _ = integrate.quad(lambda s: stats.gamma.pdf(s, m) * math.exp(-(1.0 - s)), 0.0, 0.5)
    return (2.0 * d) ** (-m) * val


def calibrate_alpha_hat(rng: np.random.Generator, m: int, d: int, n_walks: int = 200_000) -> Calibration:
    """Monte Carlo estimate of ``alpha_hat = P(F) / 8`` where ``F`` is the
    chain event of :func:`chain_event_probability` for the straight chain
    along the first axis.  The exact value is stored in ``details``."""
    if m < 0 or d < 1:
        raise ValueError("need m >= 0 and d >= 1")
    n_jumps = rng.poisson(1.0, size=n_walks)
    hits = np.zeros(n_walks, dtype=bool)
    for i in np.flatnonzero(n_jumps == m):
        times = np.sort(rng.random(m))
        if m and times[-1] >= 0.5:
            continue
        axes = rng.integers(0, d, size=m)
        signs = rng.integers(0, 2, size=m)
        hits[i] = bool(np.all(axes == 0) and np.all(signs == 1))
    p = float(hits.mean())
    se = float(math.sqrt(max(p * (1 - p), 1.0 / n_walks) / n_walks))
    exact = chain_event_probability(m, d)
    return Calibration("alpha_hat", p / 8.0, se / 8.0,
                       {"m": m, "d": d, "n_walks": n_walks, "exact": exact / 8.0})


def dump_path_csv(path: Path | JumpPath, fh) -> None:
    """Write ``t, position`` rows (one column per coordinate for jump paths)."""
    w = csv.writer(fh)
    if isinstance(path, Path):
        w.writerow(["t", "position"])
        for t, x in zip(path.times, path.positions):
            w.writerow([repr(float(t)), repr(float(x))])
    else:
        w.writerow(["t"] + [f"x{i}" for i in range(path.dim)])
        starts, _ = path.holding_intervals()
        for t, s in zip(starts, path.sites):
            w.writerow([repr(float(t))] + [int(c) for c in s])
