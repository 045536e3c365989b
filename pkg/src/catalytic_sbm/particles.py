"""Branching particle approximation of catalytic super-Brownian motion and of
the super-random walk in a random medium.

Each particle carries mass ``1/N``.  Along its path it accumulates the
branching clock ``K`` of the catalyst.  When the clock crosses the next
threshold (spacings are Exp(1) / 2N in K units) the particle dies or splits
in two with equal probability.  Particles are frozen by their own stopping
rule, so a finished population is the stopped measure of the rule.

Particles are independent given the catalyst, so the kernels advance each
lineage depth first over a time interval; children wait on a stack.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

from .catalyst import AtomicCatalyst, DensityCatalyst, LatticeCatalyst, LayeredCatalyst

__all__ = [
    "StoppingRule",
    "fixed_time",
    "exit_region",
    "k_level",
    "min_of",
    "Population",
    "PopulationExplosion",
    "RunTrace",
    "init_population",
    "evolve",
    "run_replicate",
    "total_mass",
    "classify_good_bad",
    "time_changed_mass",
    "estimate_moments",
    "MomentEstimate",
    "write_traces_csv",
]

# float columns
T, X, CLOCK, SCLOCK, THR, CBIRTH = range(6)
NF = 6
# int columns
PID, PARENT = range(2)
NI = 2

# catalyst kind codes used by the Brownian kernel
_CONST, _PARABOLIC, _GAP, _ATOMIC = range(4)


class PopulationExplosion(RuntimeError):
    """Raised when a replicate exceeds its particle-step or population cap."""


# ---------------------------------------------------------------------------
# Stopping rules


@dataclass(frozen=True)
class StoppingRule:
    """Per-particle stopping rule.

    ``kind`` is one of ``fixed_time``, ``exit_region``, ``k_level``, ``min_of``.
    A Brownian exit region is an interval ``(lo, hi)``; a lattice exit region
    is the cube of the given radius.
    """

    kind: str
    t: float = math.inf
    region: tuple[float, float] | None = None
    cube_radius: int | None = None
    r: float = math.inf
    rules: tuple["StoppingRule", ...] = ()

    def __post_init__(self):
        if self.kind not in ("fixed_time", "exit_region", "k_level", "min_of"):
            raise ValueError(f"unknown stopping rule {self.kind!r}")

    def compile(self) -> tuple[float, float, float, int, float]:
        """Flatten to ``(t_stop, lo, hi, cube_radius, r_level)``; -1 radius means none."""
        if self.kind == "fixed_time":
            return self.t, -math.inf, math.inf, -1, math.inf
        if self.kind == "exit_region":
            if self.cube_radius is not None:
                return math.inf, -math.inf, math.inf, int(self.cube_radius), math.inf
            lo, hi = self.region
            return math.inf, float(lo), float(hi), -1, math.inf
        if self.kind == "k_level":
            return math.inf, -math.inf, math.inf, -1, self.r
        t, lo, hi, rad, r = math.inf, -math.inf, math.inf, -1, math.inf
        for rule in self.rules:
            t2, lo2, hi2, rad2, r2 = rule.compile()
            t, r = min(t, t2), min(r, r2)
            lo, hi = max(lo, lo2), min(hi, hi2)
            if rad2 >= 0:
                rad = rad2 if rad < 0 else min(rad, rad2)
        return t, lo, hi, rad, r


def fixed_time(t: float) -> StoppingRule:
    return StoppingRule("fixed_time", t=float(t))


def exit_region(region=None, *, cube_radius: int | None = None) -> StoppingRule:
    if (region is None) == (cube_radius is None):
        raise ValueError("give exactly one of an interval or a cube radius")
    return StoppingRule("exit_region", region=None if region is None else (float(region[0]), float(region[1])),
                        cube_radius=cube_radius)


def k_level(r: float) -> StoppingRule:
    if r < 0:
        raise ValueError("level must be nonnegative")
    return StoppingRule("k_level", r=float(r))


def min_of(*rules: StoppingRule) -> StoppingRule:
    return StoppingRule("min_of", rules=tuple(rules))


# ---------------------------------------------------------------------------
# Catalyst encoding for the kernels


@dataclass(frozen=True)
class _Encoded:
    lattice: bool
    kind: int = _CONST
    params: np.ndarray = field(default_factory=lambda: np.zeros(6))
    locs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cumw: np.ndarray = field(default_factory=lambda: np.zeros(1))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dim: int = 1
    radius: int = 0


def _encode(cat, eps: float) -> _Encoded:
    if cat is None:
        return _Encoded(False, _CONST, np.zeros(6))
    if isinstance(cat, DensityCatalyst):
        p = np.zeros(6)
        if cat.kind == "constant":
            p[0] = cat.level
            return _Encoded(False, _CONST, p)
        if cat.kind == "parabolic":
            p[0] = cat.q
            return _Encoded(False, _PARABOLIC, p)
        p[0], p[1], p[2] = cat.gap[0], cat.gap[1], cat.level
        return _Encoded(False, _GAP, p)
    if isinstance(cat, (AtomicCatalyst, LayeredCatalyst)):
        if not eps > 0:
            raise ValueError("atomic catalysts need eps > 0")
        flat = cat.flatten() if isinstance(cat, LayeredCatalyst) else cat
        p = np.zeros(6)
        p[0] = eps
        p[1] = flat.window[0]
        p[2] = float(flat.period or 0.0)
        p[3] = flat.diffuse_density
        p[4], p[5] = flat.window
        cumw = np.concatenate([[0.0], np.cumsum(flat.weights)])
        return _Encoded(False, _ATOMIC, p, np.ascontiguousarray(flat.locations), cumw)
    if isinstance(cat, LatticeCatalyst):
        p = np.zeros(6)
        p[0] = cat.outside_default
        return _Encoded(True, values=np.ascontiguousarray(cat.values.ravel()), dim=cat.dim, radius=cat.radius,
                        params=p)
    raise TypeError(f"unsupported catalyst {type(cat).__name__}")


@nb.njit(cache=True, error_model="numpy", _nrt=False)
def _count_le(a, y):
    """Number of entries of the sorted array ``a`` that are <= y."""
    lo, hi = 0, a.size
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= y:
            lo = mid + 1
        else:
            hi = mid
    return lo


@nb.njit(cache=True, error_model="numpy", _nrt=False)
def _cum_mass(y, p, locs, cumw):
    lo = p[1]
    period = p[2]
    if period > 0.0:
        k = np.floor((y - lo) / period)
        z = y - k * period
        return k * cumw[-1] + cumw[_count_le(locs, z)] + p[3] * (y - lo)
    out = cumw[_count_le(locs, y)]
    if p[3] > 0.0:
        out += p[3] * (min(max(y, p[4]), p[5]) - p[4])
    return out


@nb.njit(cache=True, error_model="numpy", _nrt=False)
def _rate(x, kind, p, locs, cumw):
    if kind == _CONST:
        return p[0]
    if kind == _PARABOLIC:
        a = abs(x) ** p[0]
        return a if a < 1.0 else 1.0
    if kind == _GAP:
        return 0.0 if (x > p[0] and x < p[1]) else p[2]
    eps = p[0]
    return (_cum_mass(x + eps, p, locs, cumw) - _cum_mass(x - eps, p, locs, cumw)) / (2.0 * eps)


# ---------------------------------------------------------------------------
# Shared kernel helpers


@nb.njit(cache=True, error_model="numpy")
def _grown(a, need):
    b = np.empty((max(2 * a.shape[0], need, 16), a.shape[1]), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@nb.njit(cache=True, error_model="numpy", _nrt=False)
def _hist_add(deltas, r_grid, c, sgn):
    if r_grid.size:
        deltas[_count_le_left(r_grid, c)] += sgn


@nb.njit(cache=True, error_model="numpy", _nrt=False)
def _count_le_left(a, y):
    """Number of entries of the sorted array ``a`` that are < y."""
    lo, hi = 0, a.size
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < y:
            lo = mid + 1
        else:
            hi = mid
    return lo


@nb.njit(cache=True, error_model="numpy", _nrt=False)
def _put(df, di, ds, k, t, x, c, sc, thr, cb, pid, parent, site, d):
    df[k, T] = t
    df[k, X] = x
    df[k, CLOCK] = c
    df[k, SCLOCK] = sc
    df[k, THR] = thr
    df[k, CBIRTH] = cb
    di[k, PID] = pid
    di[k, PARENT] = parent
    for j in range(d):
        ds[k, j] = site[j]


# Kernel status codes
_OK, _STEP_CAP, _POP_CAP, _GEN_CAP, _GROW = 0, 1, 2, 3, 4
# counter slots
_TOP, _NOUT, _NFZ, _STEPS, _NEXT, _NGEN, _STATUS = range(7)


@nb.njit(cache=True, error_model="numpy", _nrt=False)
def _room(sf, of, ff, ctr):
    # a popped particle may push two children or emit one row
    return ctr[_TOP] + 1 <= sf.shape[0] and ctr[_NOUT] < of.shape[0] and ctr[_NFZ] < ff.shape[0]


@nb.njit(cache=True, error_model="numpy", _nrt=False)
def _brownian_inner(sf, si, ss, of, oi, os, ff, fi, fs, ctr, t_end, dt, two_n, kind, p, locs, cumw,
                    lo, hi, r_level, r_grid, deltas, gen, step_cap, pop_cap, rng):
    record_gen = gen.shape[0] > 0
    while ctr[_TOP] > 0:
        if not _room(sf, of, ff, ctr):
            ctr[_STATUS] = _GROW
            return
        top = ctr[_TOP] - 1
        ctr[_TOP] = top
        t = sf[top, T]
        x = sf[top, X]
        c = sf[top, CLOCK]
        thr = sf[top, THR]
        cb = sf[top, CBIRTH]
        sc = sf[top, SCLOCK]
        pid = si[top, PID]
        parent = si[top, PARENT]
        fate = 0  # 0 alive at t_end, 1 frozen, 2 died, 3 split
        if c >= r_level or x <= lo or x >= hi:
            fate = 1
        steps = ctr[_STEPS]
        while fate == 0 and t < t_end:
            steps += 1
            if steps > step_cap:
                ctr[_STATUS] = _STEP_CAP
                return
            h = dt if dt < t_end - t else t_end - t
            x1 = x + math.sqrt(h) * rng.standard_normal()
            # left-point rate: the branching decision must not depend on where the step ends,
            # otherwise steps heading into the catalyst are selected and then discarded
            dk = h * _rate(x, kind, p, locs, cumw)
            f = 1.0
            ev = 0
            if x1 <= lo:
                f = (lo - x) / (x1 - x)
                ev = 1
            elif x1 >= hi:
                f = (hi - x) / (x1 - x)
                ev = 1
            if dk > 0.0:
                fl = (r_level - c) / dk
                if fl < f:
                    f = fl
                    ev = 2
                fb = (thr - c) / dk
                if fb < f:
                    f = fb
                    ev = 3
            if ev == 0 and (lo > -math.inf or hi < math.inf):
                # the bridge may leave and re-enter between grid points; charge such exits
                # to the end of the step so detection bias is O(dt) rather than O(sqrt(dt))
                p_lo = math.exp(-2.0 * (x - lo) * (x1 - lo) / h)
                p_hi = math.exp(-2.0 * (hi - x) * (hi - x1) / h)
                u = rng.random()
                if u < p_lo + p_hi:
                    t += h
                    c += dk
                    x = lo if u < p_lo else hi
                    fate = 1
                    continue
            if ev == 0:
                t += h
                x = x1
                c += dk
                continue
            # event inside the step at fraction f
            if ev == 1:
                xe = lo if x1 <= lo else hi
            else:
                v = f * (1.0 - f)
                xe = x + f * (x1 - x) + math.sqrt((v if v > 0.0 else 0.0) * h) * rng.standard_normal()
            t += f * h
            c += f * dk
            x = xe
            if ev == 1:
                fate = 1
            elif ev == 2:
                c = r_level
                fate = 1
            else:
                c = thr
                fate = 3 if rng.random() < 0.5 else 2
        ctr[_STEPS] = steps
        if fate == 0:
            _put(of, oi, os, ctr[_NOUT], t, x, c, sc, thr, cb, pid, parent, oi[0, :0], 0)
            ctr[_NOUT] += 1
        elif fate == 1:
            _put(ff, fi, fs, ctr[_NFZ], t, x, c, sc, thr, cb, pid, parent, oi[0, :0], 0)
            ctr[_NFZ] += 1
        else:
            _hist_add(deltas, r_grid, cb, 1)
            _hist_add(deltas, r_grid, c, -1)
            if fate == 3:
                for _ in range(2):
                    k = ctr[_TOP]
                    nid = ctr[_NEXT]
                    _put(sf, si, ss, k, t, x, c, sc, c + rng.standard_exponential() / two_n, c, nid, pid,
                         oi[0, :0], 0)
                    if record_gen:
                        if ctr[_NGEN] >= gen.shape[0]:
                            ctr[_STATUS] = _GEN_CAP
                            return
                        gen[ctr[_NGEN], 0] = nid
                        gen[ctr[_NGEN], 1] = pid
                        gen[ctr[_NGEN], 2] = t
                        ctr[_NGEN] += 1
                    ctr[_NEXT] = nid + 1
                    ctr[_TOP] = k + 1
                if ctr[_TOP] + ctr[_NOUT] + ctr[_NFZ] > pop_cap:
                    ctr[_STATUS] = _POP_CAP
                    return
    ctr[_STATUS] = _OK


@nb.njit(cache=True, error_model="numpy", _nrt=False)
def _site_value(site, d, radius, side, values, outside):
    idx = 0
    for k in range(d):
        s = site[k]
        if s < -radius or s > radius:
            return outside
        idx = idx * side + (s + radius)
    return values[idx]


@nb.njit(cache=True, error_model="numpy", _nrt=False)
def _outside_cube(site, d, rad):
    for k in range(d):
        if site[k] < -rad or site[k] > rad:
            return True
    return False


@nb.njit(cache=True, error_model="numpy", _nrt=False)
def _lattice_inner(sf, si, ss, of, oi, os, ff, fi, fs, ctr, cur, t_end, two_n, values, d, radius, outside,
                   cube_rad, r_level, r_grid, deltas, gen, step_cap, pop_cap, rng):
    """Exact event-driven lattice advance.  Each particle waits for the
    earliest of a jump (fresh Exp(1) wait, by memorylessness), its branch
    threshold, its K level or ``t_end``."""
    side = 2 * radius + 1
    record_gen = gen.shape[0] > 0
    while ctr[_TOP] > 0:
        if not _room(sf, of, ff, ctr):
            ctr[_STATUS] = _GROW
            return
        top = ctr[_TOP] - 1
        ctr[_TOP] = top
        t = sf[top, T]
        c = sf[top, CLOCK]
        thr = sf[top, THR]
        cb = sf[top, CBIRTH]
        sc = sf[top, SCLOCK]
        pid = si[top, PID]
        parent = si[top, PARENT]
        for k in range(d):
            cur[k] = ss[top, k]
        fate = 0
        if c >= r_level or (cube_rad >= 0 and _outside_cube(cur, d, cube_rad)):
            fate = 1
        steps = ctr[_STEPS]
        while fate == 0 and t < t_end:
            steps += 1
            if steps > step_cap:
                ctr[_STATUS] = _STEP_CAP
                return
            rho = _site_value(cur, d, radius, side, values, outside)
            tj = t + rng.standard_exponential()
            tbr = t + (thr - c) / rho
            tl = t + (r_level - c) / rho
            if t_end < tj and t_end < tbr and t_end < tl:
                c += rho * (t_end - t)
                t = t_end
            elif tbr <= tj and tbr <= tl:
                t = tbr
                c = thr
                fate = 3 if rng.random() < 0.5 else 2
            elif tl <= tj:
                t = tl
                c = r_level
                fate = 1
            else:
                c += rho * (tj - t)
                t = tj
                k = int(rng.random() * 2 * d)
                if k >= 2 * d:
                    k = 2 * d - 1
                cur[k // 2] += 1 if k % 2 == 0 else -1
                if cube_rad >= 0 and _outside_cube(cur, d, cube_rad):
                    fate = 1
        ctr[_STEPS] = steps
        if fate == 0:
            _put(of, oi, os, ctr[_NOUT], t, 0.0, c, sc, thr, cb, pid, parent, cur, d)
            ctr[_NOUT] += 1
        elif fate == 1:
            _put(ff, fi, fs, ctr[_NFZ], t, 0.0, c, sc, thr, cb, pid, parent, cur, d)
            ctr[_NFZ] += 1
        else:
            _hist_add(deltas, r_grid, cb, 1)
            _hist_add(deltas, r_grid, c, -1)
            if fate == 3:
                for _ in range(2):
                    k = ctr[_TOP]
                    nid = ctr[_NEXT]
                    _put(sf, si, ss, k, t, 0.0, c, sc, c + rng.standard_exponential() / two_n, c, nid, pid, cur, d)
                    if record_gen:
                        if ctr[_NGEN] >= gen.shape[0]:
                            ctr[_STATUS] = _GEN_CAP
                            return
                        gen[ctr[_NGEN], 0] = nid
                        gen[ctr[_NGEN], 1] = pid
                        gen[ctr[_NGEN], 2] = t
                        ctr[_NGEN] += 1
                    ctr[_NEXT] = nid + 1
                    ctr[_TOP] = k + 1
                if ctr[_TOP] + ctr[_NOUT] + ctr[_NFZ] > pop_cap:
                    ctr[_STATUS] = _POP_CAP
                    return
    ctr[_STATUS] = _OK


@nb.njit(cache=True, error_model="numpy")
def _advance(F, I, S, lattice, t_end, dt, two_n, kind, p, locs, cumw, values, radius, outside,
             lo, hi, cube_rad, r_level, r_grid, deltas, gen, n_gen, next_pid, step_cap, pop_cap, rng):
    """Advance every particle in (F, I, S) to ``t_end``.

    Buffers are grown here, outside the hot loops, whenever the inner kernel
    reports that it is short of room.
    """
    n0 = F.shape[0]
    d = S.shape[1]
    sf = np.empty((max(2 * n0, 16), NF))
    si = np.empty((sf.shape[0], NI), dtype=np.int64)
    ss = np.empty((sf.shape[0], d), dtype=np.int64)
    sf[:n0] = F
    si[:n0] = I
    ss[:n0] = S
    of = np.empty((max(n0, 16), NF))
    oi = np.empty((of.shape[0], NI), dtype=np.int64)
    os = np.empty((of.shape[0], d), dtype=np.int64)
    ff = np.empty((16, NF))
    fi = np.empty((16, NI), dtype=np.int64)
    fs = np.empty((16, d), dtype=np.int64)
    cur = np.zeros(d, dtype=np.int64)
    ctr = np.zeros(7, dtype=np.int64)
    ctr[_TOP] = n0
    ctr[_NEXT] = next_pid
    ctr[_NGEN] = n_gen
    while True:
        if lattice:
            _lattice_inner(sf, si, ss, of, oi, os, ff, fi, fs, ctr, cur, t_end, two_n, values, d, radius,
                           outside, cube_rad, r_level, r_grid, deltas, gen, step_cap, pop_cap, rng)
        else:
            _brownian_inner(sf, si, ss, of, oi, os, ff, fi, fs, ctr, t_end, dt, two_n, kind, p, locs, cumw,
                            lo, hi, r_level, r_grid, deltas, gen, step_cap, pop_cap, rng)
        if ctr[_STATUS] != _GROW:
            break
        if ctr[_TOP] + 1 > sf.shape[0]:
            sf = _grown(sf, ctr[_TOP] + 2)
            si = _grown(si, ctr[_TOP] + 2)
            ss = _grown(ss, ctr[_TOP] + 2)
        if ctr[_NOUT] >= of.shape[0]:
            of = _grown(of, ctr[_NOUT] + 1)
            oi = _grown(oi, ctr[_NOUT] + 1)
            os = _grown(os, ctr[_NOUT] + 1)
        if ctr[_NFZ] >= ff.shape[0]:
            ff = _grown(ff, ctr[_NFZ] + 1)
            fi = _grown(fi, ctr[_NFZ] + 1)
            fs = _grown(fs, ctr[_NFZ] + 1)
    n_out, n_fz = ctr[_NOUT], ctr[_NFZ]
    return (of[:n_out].copy(), oi[:n_out].copy(), os[:n_out].copy(), ff[:n_fz].copy(), fi[:n_fz].copy(),
            fs[:n_fz].copy(), ctr[_STATUS], ctr[_STEPS], ctr[_NEXT], ctr[_NGEN])


# ---------------------------------------------------------------------------
# Population


@dataclass
class Population:
    """Alive and frozen particles of one replicate.

    ``F``/``I`` hold the float and integer columns of alive particles;
    ``sites`` holds lattice coordinates (zero columns for Brownian motion).
    Frozen particles keep the state at their stopping time.
    """

    N: int
    time: float
    F: np.ndarray
    I: np.ndarray
    sites: np.ndarray
    frozen_F: np.ndarray
    frozen_I: np.ndarray
    frozen_sites: np.ndarray
    lattice: bool
    next_pid: int
    steps: int = 0
    r_grid: np.ndarray = field(default_factory=lambda: np.empty(0))
    r_deltas: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))
    genealogy: np.ndarray | None = None
    n_gen: int = 0

    @property
    def n_alive(self) -> int:
        return int(self.F.shape[0])

    @property
    def n_frozen(self) -> int:
        return int(self.frozen_F.shape[0])

    @property
    def count(self) -> int:
        return self.n_alive + self.n_frozen

    @property
    def positions(self) -> np.ndarray:
        """Alive then frozen positions (sites for lattice populations)."""
        if self.lattice:
            return np.vstack([self.sites, self.frozen_sites])
        return np.concatenate([self.F[:, X], self.frozen_F[:, X]])

    @property
    def clocks(self) -> np.ndarray:
        return np.concatenate([self.F[:, CLOCK], self.frozen_F[:, CLOCK]])

    @property
    def stage_increments(self) -> np.ndarray:
        allf = np.vstack([self.F, self.frozen_F])
        return allf[:, CLOCK] - allf[:, SCLOCK]

    def begin_stage(self) -> None:
        """Reset the stage clock origin of every particle to its current clock."""
        self.F[:, SCLOCK] = self.F[:, CLOCK]
        self.frozen_F[:, SCLOCK] = self.frozen_F[:, CLOCK]

    def unfreeze(self) -> None:
        """Return frozen particles to the alive set (used between stages)."""
        self.F = np.vstack([self.F, self.frozen_F])
        self.I = np.vstack([self.I, self.frozen_I])
        self.sites = np.vstack([self.sites, self.frozen_sites])
        self.frozen_F = self.frozen_F[:0]
        self.frozen_I = self.frozen_I[:0]
        self.frozen_sites = self.frozen_sites[:0]

    def genealogy_table(self) -> np.ndarray:
        """Rows ``(child_id, parent_id, birth_time)`` recorded so far."""
        if self.genealogy is None:
            raise ValueError("genealogy recording was not enabled")
        return self.genealogy[: self.n_gen].copy()


def total_mass(pop: Population) -> float:
    """Alive plus frozen particle count divided by ``N``."""
    return pop.count / pop.N


def _sample_positions(measure, n: int, rng: np.random.Generator, d: int):
    kind = measure.get("kind", "dirac")
    if kind == "dirac":
        at = measure.get("at", 0.0)
        return np.repeat(np.atleast_1d(np.asarray(at, dtype=float))[None, :], n, axis=0)
    if kind == "uniform":
        lo, hi = measure["low"], measure["high"]
        return (lo + (hi - lo) * rng.random(n))[:, None]
    if kind == "points":
        pts = np.asarray(measure["points"], dtype=float)
        w = np.asarray(measure.get("weights", np.ones(len(pts))), dtype=float)
        idx = rng.choice(len(pts), size=n, p=w / w.sum())
        return np.atleast_2d(pts[idx].T).T.reshape(n, -1)
    raise ValueError(f"unknown initial measure kind {kind!r}")


def init_population(measure: dict, N: int, rng: np.random.Generator, *, lattice: bool = False, dim: int = 1,
                    t0: float = 0.0, genealogy_cap: int = 0) -> Population:
    """Place ``mass * N`` particles (unbiased Bernoulli rounding) sampled from
    the initial measure.

    ``measure`` has ``mass`` and ``kind`` in ``dirac`` (``at``), ``uniform``
    (``low``, ``high``) or ``points`` (``points``, optional ``weights``).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    mass = float(measure.get("mass", 1.0))
    if not mass > 0:
        raise ValueError("initial measure must have positive mass")
    target = mass * N
    base = math.floor(target)
    frac = target - base
    # snap round-off so integer targets are deterministic
    if frac < 1e-9 or frac > 1 - 1e-9:
        n = int(round(target))
    else:
        n = base + int(rng.random() < frac)
    pos = _sample_positions(measure, n, rng, dim)
    two_n = 2.0 * N
    F = np.zeros((n, NF))
    F[:, T] = t0
    F[:, THR] = rng.standard_exponential(n) / two_n
    I = np.empty((n, NI), dtype=np.int64)
    I[:, PID] = np.arange(n)
    I[:, PARENT] = -1
    if lattice:
        sites = np.rint(pos).astype(np.int64).reshape(n, dim)
    else:
        F[:, X] = pos[:, 0] if n else 0.0
        sites = np.empty((n, 0), dtype=np.int64)
    gen = np.zeros((genealogy_cap, 3)) if genealogy_cap else None
    return Population(N, t0, F, I, sites, F[:0].copy(), I[:0].copy(), sites[:0].copy(), lattice, n, genealogy=gen)


def evolve(pop: Population, cat, stop: StoppingRule, t_b: float, rng: np.random.Generator, *,
           dt: float = 1e-3, eps: float = 1e-2, step_cap: int = 10_000_000,
           pop_cap: int = 5_000_000) -> Population:
    """Advance the population to time ``t_b`` in place and return it.

    Particles hit by ``stop`` are frozen with their state at the stopping
    time; a fixed-time rule caps ``t_b``.  ``dt`` is the Brownian step (ignored
    on the lattice) and ``eps`` the local-time smoothing for atomic catalysts.
    ``step_cap`` bounds the particle steps of the whole replicate.
    """
    enc = _encode(cat, eps)
    if enc.lattice != pop.lattice:
        raise ValueError("catalyst and population motion kinds differ")
    t_stop, lo, hi, cube_rad, r_level = stop.compile()
    t_target = min(t_b, t_stop)
    if t_target <= pop.time:
        return pop
    gen = pop.genealogy if pop.genealogy is not None else np.zeros((0, 3))
    remaining = step_cap - pop.steps
    if pop.lattice:
        if lo != -math.inf or hi != math.inf:
            raise ValueError("lattice populations stop on cubes, not intervals")
    elif cube_rad >= 0:
        raise ValueError("Brownian populations stop on intervals, not cubes")
    res = _advance(pop.F, pop.I, pop.sites, pop.lattice, float(t_target), float(dt), 2.0 * pop.N, enc.kind,
                   enc.params, enc.locs, enc.cumw, enc.values, enc.radius, float(enc.params[0]), float(lo),
                   float(hi), int(cube_rad), float(r_level), pop.r_grid, pop.r_deltas, gen, pop.n_gen,
                   pop.next_pid, remaining, pop_cap, rng)
    F, I, S, fF, fI, fS, status, steps, next_pid, n_gen = res
    pop.steps += int(steps)
    if status == _STEP_CAP:
        raise PopulationExplosion(f"particle-step cap {step_cap} exceeded")
    if status == _POP_CAP:
        raise PopulationExplosion(f"population cap {pop_cap} exceeded")
    if status == _GEN_CAP:
        raise PopulationExplosion("genealogy table full; raise genealogy_cap")
    pop.F, pop.I, pop.sites = F, I, S
    pop.frozen_F = np.vstack([pop.frozen_F, fF])
    pop.frozen_I = np.vstack([pop.frozen_I, fI])
    pop.frozen_sites = np.vstack([pop.frozen_sites, fS])
    pop.next_pid, pop.n_gen = int(next_pid), int(n_gen)
    pop.time = float(t_target)
    return pop


def classify_good_bad(pop: Population, xi: float) -> tuple[float, float]:
    """Split the current mass by whether the ancestral line gathered at least
    ``xi`` of branching clock since the last :meth:`Population.begin_stage`."""
    if xi < 0:
        raise ValueError("xi must be nonnegative")
    inc = pop.stage_increments
    good = int(np.count_nonzero(inc >= xi)) if xi < math.inf else 0
    return good / pop.N, (inc.size - good) / pop.N


def time_changed_mass(pop: Population, censor_ok: bool = False) -> np.ndarray:
    """``Z_r`` on the population's ``r_grid``: mass of lineages whose clock has
    reached ``r``, each taken when it does.

    Needs a population started with a nonempty ``r_grid`` and evolved to the
    end.  Particles frozen by a K-level rule count for every ``r`` above their
    birth clock; alive particles whose clock is below ``r`` make ``Z_r``
    unknown, which raises unless ``censor_ok``.
    """
    r_grid = pop.r_grid
    if r_grid.size == 0:
        raise ValueError("population has no r_grid")
    deltas = pop.r_deltas.copy()
    idx = np.searchsorted(r_grid, pop.F[:, CBIRTH])
    np.add.at(deltas, idx, 1)
    np.add.at(deltas, np.searchsorted(r_grid, pop.F[:, CLOCK]), -1)
    if not censor_ok and pop.n_alive and np.any(pop.F[:, CLOCK] < r_grid[-1]):
        raise ValueError("alive particles have not reached the top of r_grid")
    fz = pop.frozen_F
    np.add.at(deltas, np.searchsorted(r_grid, fz[:, CBIRTH]), 1)
    # frozen below the top level by another rule: their clock ends there
    low = fz[:, CLOCK] < r_grid[-1]
    np.add.at(deltas, np.searchsorted(r_grid, fz[low, CLOCK], side="right"), -1)
    return np.cumsum(deltas)[: r_grid.size] / pop.N


def attach_r_grid(pop: Population, r_grid) -> Population:
    """Enable the time-changed mass histogram on a fresh population."""
    r = np.asarray(r_grid, dtype=float)
    if r.size == 0 or np.any(np.diff(r) <= 0) or r[0] < 0:
        raise ValueError("r_grid must be nonnegative and strictly increasing")
    pop.r_grid = r
    pop.r_deltas = np.zeros(r.size + 1, dtype=np.int64)
    return pop


# ---------------------------------------------------------------------------
# Replicates and moments


@dataclass
class RunTrace:
    """Per-record-time summaries of one replicate."""

    replicate: int
    times: np.ndarray
    total_mass: np.ndarray
    good_mass: np.ndarray
    bad_mass: np.ndarray
    particle_count: np.ndarray
    final: Population | None = None


def run_replicate(replicate: int, cat, init_spec: dict, N: int, record_times: Sequence[float],
                  rng: np.random.Generator, *, stop: StoppingRule | None = None, xi: float = math.inf,
                  dt: float = 1e-3, eps: float = 1e-2, lattice: bool = False, dim: int = 1,
                  keep_final: bool = False, step_cap: int = 10_000_000, stop_when_extinct: bool = True,
                  r_grid=None) -> RunTrace:
    """Evolve one replicate through the record times (increasing)."""
    rec = np.asarray(record_times, dtype=float)
    pop = init_population(init_spec, N, rng, lattice=lattice, dim=dim)
    if r_grid is not None:
        attach_r_grid(pop, r_grid)
    stop = stop if stop is not None else fixed_time(float(rec[-1]))
    k = rec.size
    tm, gm, bm, pc = np.zeros(k), np.zeros(k), np.zeros(k), np.zeros(k, dtype=np.int64)
    for i, t in enumerate(rec):
        if not (stop_when_extinct and pop.n_alive == 0):
            evolve(pop, cat, stop, float(t), rng, dt=dt, eps=eps, step_cap=step_cap)
        tm[i] = total_mass(pop)
        gm[i], bm[i] = classify_good_bad(pop, xi)
        pc[i] = pop.count
    return RunTrace(replicate, rec, tm, gm, bm, pc, pop if keep_final else None)


def write_traces_csv(traces: Sequence[RunTrace], fh) -> None:
    w = csv.writer(fh)
    w.writerow(["replicate", "t", "total_mass", "good_mass", "bad_mass", "particle_count"])
    for tr in traces:
        for j in range(tr.times.size):
            w.writerow([tr.replicate, repr(float(tr.times[j])), repr(float(tr.total_mass[j])),
                        repr(float(tr.good_mass[j])), repr(float(tr.bad_mass[j])), int(tr.particle_count[j])])


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    variance: float
    mean_se: float
    variance_se: float
    n: int


def estimate_moments(values) -> MomentEstimate:
    """Mean and variance of per-replicate values ``<X_tau, phi>`` with
    jackknife standard errors."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        raise ValueError("need at least two replicates")
    mean = float(v.mean())
    var = float(v.var(ddof=1))
    # leave-one-out variances in closed form
    s1, s2 = v.sum(), (v * v).sum()
    m_loo = (s1 - v) / (n - 1)
    var_loo = ((s2 - v * v) - (n - 1) * m_loo**2) / (n - 2) if n > 2 else np.zeros(n)
    jk = lambda th: math.sqrt((n - 1) / n * float(np.sum((th - th.mean()) ** 2)))  # noqa: E731
    return MomentEstimate(mean, var, jk(m_loo), jk(var_loo) if n > 2 else math.nan, n)
