"""Branching rate functionals K along a path and their inverse time change."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .catalyst import AtomicCatalyst, CumulativeMass, DensityCatalyst, LatticeCatalyst, LayeredCatalyst
from .motion import JumpPath, Path

__all__ = [
    "CumulativeFunctional",
    "clt_atomic",
    "clt_density",
    "clt_lattice",
    "clt",
    "inverse_time_change",
    "atomic_rate",
]


@dataclass(frozen=True)
class CumulativeFunctional:
    """Non-decreasing piecewise-linear function ``K`` with ``K(times[0]) = 0``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if t.shape != v.shape or t.size == 0:
            raise ValueError("times and values must be nonempty and of equal length")
        if np.any(np.diff(t) < 0):
            raise ValueError("times must be non-decreasing")
        if v[0] != 0.0:
            raise ValueError("K must start at 0")
        if np.any(np.diff(v) < 0):
            raise ValueError("K must be non-decreasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def final(self) -> float:
        return float(self.values[-1])

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def __add__(self, other: "CumulativeFunctional") -> "CumulativeFunctional":
        if not np.array_equal(self.times, other.times):
            raise ValueError("functionals live on different grids")
        return CumulativeFunctional(self.times, self.values + other.values)

    def to_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["t", "K"])
        for t, k in zip(self.times, self.values):
            w.writerow([repr(float(t)), repr(float(k))])


def _from_increments(times: np.ndarray, inc: np.ndarray) -> CumulativeFunctional:
    vals = np.zeros(times.size)
    np.cumsum(inc, out=vals[1:])
    return CumulativeFunctional(times, vals)


def atomic_rate(x, cum: CumulativeMass, eps: float):
    """Smoothed catalyst density ``g(x) = mass((x - eps, x + eps]) / 2eps``."""
    return cum.smoothed_density(x, eps)


def clt_atomic(path: Path, cat: AtomicCatalyst | LayeredCatalyst, eps: float) -> CumulativeFunctional:
    """``K(t) = sum_i w_i L^eps_t(b_i)`` via the smoothed density of the catalyst.

    The eps-local time at ``b`` counts time in ``[b - eps, b + eps)``, so the
    weight seen from position ``x`` is the catalyst mass of ``(x - eps, x + eps]``.
    Only atoms within the path range plus ``eps`` contribute; prefix sums make
    the cost independent of how many atoms lie elsewhere.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    cum = CumulativeMass.from_catalyst(cat)
    g = cum.smoothed_density(path.positions, eps)
    inc = 0.5 * path.dt * (g[:-1] + g[1:])
    return _from_increments(path.times, inc)


def clt_density(path: Path, cat: DensityCatalyst) -> CumulativeFunctional:
    """Trapezoidal integral of the catalyst density along the path."""
    if cat.kind == "constant":
        # exact for a flat density; avoids round-off drift in the cumulative sum
        return CumulativeFunctional(path.times, cat.level * (path.times - path.t0))
    g = np.asarray(cat(path.positions), dtype=float)
    return _from_increments(path.times, 0.5 * path.dt * (g[:-1] + g[1:]))


def clt_lattice(path: JumpPath, cat: LatticeCatalyst) -> CumulativeFunctional:
    """Exact ``int rho(W_s) ds`` from holding intervals; knots at jump times."""
    starts, ends = path.holding_intervals()
    rho = np.array([cat.value_at(s) for s in path.sites])
    inc = rho * (ends - starts)
    times = np.concatenate([starts, [path.t_end]])
    return _from_increments(times, inc)


def clt(path, cat, eps: float | None = None) -> CumulativeFunctional:
    """Dispatch on catalyst kind."""
    if isinstance(cat, DensityCatalyst):
        return clt_density(path, cat)
    if isinstance(cat, LatticeCatalyst):
        return clt_lattice(path, cat)
    if eps is None:
        raise ValueError("atomic catalysts need eps")
    return clt_atomic(path, cat, eps)


def inverse_time_change(K: CumulativeFunctional, r: float) -> float | None:
    """``inf{t: K(t) >= r}`` for the piecewise-linear interpolant; None if the
    level is not reached by the end of the path."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    v = K.values
    if r == 0:
        return float(K.times[0])
    if r > v[-1]:
        return None
    j = int(np.searchsorted(v, r, side="left"))  # first knot with v >= r
    if v[j] == r:
        return float(K.times[j])
    t0, t1 = K.times[j - 1], K.times[j]
    v0, v1 = v[j - 1], v[j]
    return float(t0 + (r - v0) / (v1 - v0) * (t1 - t0))
