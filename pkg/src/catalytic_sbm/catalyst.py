"""Catalytic environments: stable point catalysts, their dyadic layer
reductions, deterministic density catalysts and i.i.d. lattice catalysts.

All catalysts are immutable once built.  Sampling functions take an explicit
``numpy.random.Generator``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import integrate, ndimage

__all__ = [
    "AtomicCatalyst",
    "LayeredCatalyst",
    "DensityCatalyst",
    "LatticeCatalyst",
    "UnboundedGapError",
    "stable_constant",
    "stable_levy_constant",
    "sample_stable_catalyst",
    "sample_stable_masses",
    "stable_band_range",
    "quantize_and_truncate",
    "periodic_extension",
    "max_gap",
    "unroll_points",
    "sample_lattice_catalyst",
    "cluster_event",
    "low_cluster_sizes",
    "count_lattice_animals",
    "catalyst_to_dict",
    "catalyst_from_dict",
    "dumps",
    "loads",
]

# Default cap on lattice cube size (number of sites).
MAX_LATTICE_SITES = 20_000_000
_CHUNK_ATOMS = 2_000_000


class UnboundedGapError(ValueError):
    """Raised when a gap statistic is requested for an empty point set."""


def _check_window(window: Sequence[float]) -> tuple[float, float]:
    lo, hi = float(window[0]), float(window[1])
    if not hi >= lo:
        raise ValueError(f"window must satisfy lo <= hi, got {window!r}")
    return lo, hi


# ---------------------------------------------------------------------------
# Catalyst types


@dataclass(frozen=True)
class AtomicCatalyst:
    """Purely atomic catalyst ``sum_i w_i delta_{b_i}`` on a window ``(lo, hi]``.

    ``diffuse_density`` is an optional constant density added on the window;
    it is used to carry the mean of atoms cut off below the sampling floor.
    When ``period`` is set the configuration repeats with that period.
    """

    locations: np.ndarray
    weights: np.ndarray
    window: tuple[float, float]
    period: float | None = None
    diffuse_density: float = 0.0

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if loc.shape != w.shape:
            raise ValueError("locations and weights must have the same length")
        if np.any(~(w > 0)):
            raise ValueError("atom weights must be strictly positive")
        order = np.argsort(loc, kind="stable")
        loc, w = loc[order], w[order]
        lo, hi = _check_window(self.window)
        if loc.size and (loc[0] <= lo or loc[-1] > hi):
            raise ValueError("atoms must lie in the half-open window (lo, hi]")
        if self.period is not None and not math.isclose(self.period, hi - lo):
            raise ValueError("period must equal the window length")
        if self.diffuse_density < 0:
            raise ValueError("diffuse_density must be nonnegative")
        loc.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "window", (lo, hi))

    @property
    def n_atoms(self) -> int:
        return int(self.locations.size)

    def total_mass(self) -> float:
        """Mass on the window (one period), including the diffuse part."""
        lo, hi = self.window
        return float(self.weights.sum()) + self.diffuse_density * (hi - lo)

    def cumulative(self) -> "CumulativeMass":
        return CumulativeMass.from_catalyst(self)

    def mass_in(self, a: float, b: float) -> float:
        """Catalyst mass of the interval ``(a, b]`` (periodic catalysts unrolled)."""
        return self.cumulative().mass_between(a, b)

    def atoms_in(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """Atoms (locations, weights) inside ``(a, b]``, unrolled if periodic."""
        if self.period is None:
            i0 = np.searchsorted(self.locations, a, side="right")
            i1 = np.searchsorted(self.locations, b, side="right")
            return self.locations[i0:i1].copy(), self.weights[i0:i1].copy()
        locs, idx = unroll_points(self.locations, self.period, a, b, return_index=True)
        return locs, self.weights[idx]


@dataclass(frozen=True)
class LayeredCatalyst:
    """Layer decomposition ``sum_{n >= n_min} 2^{-n} pi_n``.

    ``layers`` maps a layer index to the sorted atom locations of ``pi_n``;
    every atom of layer ``n`` carries weight exactly ``2**-n``.
    """

    layers: Mapping[int, np.ndarray]
    n_min: int
    window: tuple[float, float]
    period: float | None = None

    def __post_init__(self):
        lo, hi = _check_window(self.window)
        clean = {}
        for n, pts in sorted(self.layers.items()):
            n = int(n)
            if n < self.n_min:
                raise ValueError(f"layer {n} below n_min={self.n_min}")
            arr = np.sort(np.asarray(pts, dtype=float).reshape(-1))
            if arr.size and (arr[0] <= lo or arr[-1] > hi):
                raise ValueError("layer atoms must lie in the window (lo, hi]")
            arr.setflags(write=False)
            clean[n] = arr
        if self.period is not None and not math.isclose(self.period, hi - lo):
            raise ValueError("period must equal the window length")
        object.__setattr__(self, "layers", clean)
        object.__setattr__(self, "window", (lo, hi))

    @staticmethod
    def layer_weight(n: int) -> float:
        return math.ldexp(1.0, -int(n))

    def total_mass(self) -> float:
        return float(sum(self.layer_weight(n) * pts.size for n, pts in self.layers.items()))

    def layer(self, n: int) -> np.ndarray:
        return self.layers.get(int(n), np.empty(0))

    def flatten(self) -> AtomicCatalyst:
        locs = [pts for pts in self.layers.values()]
        ws = [np.full(pts.size, self.layer_weight(n)) for n, pts in self.layers.items()]
        return AtomicCatalyst(
            np.concatenate(locs) if locs else np.empty(0),
            np.concatenate(ws) if ws else np.empty(0),
            self.window,
            self.period,
        )

    def single_layer(self, n: int) -> "LayeredCatalyst":
        return LayeredCatalyst({int(n): self.layer(n)}, min(int(n), self.n_min), self.window, self.period)


@dataclass(frozen=True)
class DensityCatalyst:
    """Catalyst with a bounded density.

    kinds: ``parabolic`` (``|b|^q ^ 1``), ``constant`` and ``gap`` (density 0 on
    the open interval ``(lo, hi)``, ``level`` elsewhere).
    """

    kind: str
    q: float = 1.0
    level: float = 1.0
    gap: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("parabolic", "constant", "gap"):
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.kind == "parabolic" and not self.q > 0:
            raise ValueError("parabolic exponent q must be positive")
        if self.level < 0:
            raise ValueError("density level must be nonnegative")
        if self.kind == "gap" and not self.gap[0] < self.gap[1]:
            raise ValueError("gap must be a nonempty interval")
        object.__setattr__(self, "gap", (float(self.gap[0]), float(self.gap[1])))

    @classmethod
    def parabolic(cls, q: float) -> "DensityCatalyst":
        return cls("parabolic", q=q)

    @classmethod
    def constant(cls, level: float) -> "DensityCatalyst":
        return cls("constant", level=level)

    @classmethod
    def with_gap(cls, lo: float = -1.0, hi: float = 1.0, level: float = 1.0) -> "DensityCatalyst":
        return cls("gap", level=level, gap=(lo, hi))

    @property
    def max_level(self) -> float:
        return 1.0 if self.kind == "parabolic" else self.level

    def __call__(self, b):
        b = np.asarray(b, dtype=float)
        if self.kind == "parabolic":
            out = np.minimum(np.abs(b) ** self.q, 1.0)
        elif self.kind == "constant":
            out = np.full(b.shape, self.level)
        else:
            lo, hi = self.gap
            out = np.where((b > lo) & (b < hi), 0.0, self.level)
        return out if out.ndim else float(out)

    def scaled(self, factor: float) -> "DensityCatalyst":
        if self.kind == "parabolic":
            raise ValueError("parabolic catalysts cannot be rescaled; use a constant or gap kind")
        return DensityCatalyst(self.kind, self.q, self.level * factor, self.gap)


@dataclass(frozen=True)
class LatticeCatalyst:
    """I.i.d. catalyst values on the cube ``D_n = {max|b_i| <= 2^n}`` of ``Z^d``.

    Sites outside the cube take ``outside_default``.
    """

    dim: int
    radius_exponent: int
    values: np.ndarray
    outside_default: float = 1.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        side = 2 * self.radius + 1
        if vals.shape != (side,) * self.dim:
            raise ValueError(f"values must have shape {(side,) * self.dim}, got {vals.shape}")
        if np.any((vals <= 0) | (vals >= 1)):
            raise ValueError("lattice catalyst values must lie in (0, 1)")
        if not 0 < self.outside_default <= 1:
            raise ValueError("outside_default must lie in (0, 1]")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def radius(self) -> int:
        return 1 << self.radius_exponent

    @property
    def n_sites(self) -> int:
        return int(self.values.size)

    def value_at(self, site: Sequence[int]) -> float:
        site = tuple(int(s) for s in site)
        if len(site) != self.dim:
            raise ValueError("site dimension mismatch")
        r = self.radius
        if max(abs(s) for s in site) > r:
            return self.outside_default
        return float(self.values[tuple(s + r for s in site)])


Catalyst = AtomicCatalyst | LayeredCatalyst | DensityCatalyst | LatticeCatalyst


# ---------------------------------------------------------------------------
# Cumulative mass (prefix sums) used for fast eps-window evaluation


@dataclass(frozen=True)
class CumulativeMass:
    """Prefix-sum view of an atomic catalyst.

    ``F(y)`` is the (unrolled) catalyst mass of ``(lo, y]`` for periodic
    catalysts, and the mass of ``(-inf, y]`` otherwise.
    """

    locations: np.ndarray
    cumweights: np.ndarray  # length n_atoms + 1, cumweights[0] == 0
    lo: float
    period: float  # 0.0 when not periodic
    diffuse_density: float
    diffuse_window: tuple[float, float]

    @classmethod
    def from_catalyst(cls, cat: AtomicCatalyst | LayeredCatalyst) -> "CumulativeMass":
        if isinstance(cat, LayeredCatalyst):
            cat = cat.flatten()
        cw = np.concatenate([[0.0], np.cumsum(cat.weights)])
        return cls(
            cat.locations,
            cw,
            cat.window[0],
            float(cat.period or 0.0),
            float(cat.diffuse_density),
            cat.window,
        )

    def F(self, y):
        y = np.asarray(y, dtype=float)
        if self.period > 0:
            k = np.floor((y - self.lo) / self.period)
            z = y - k * self.period
            total = self.cumweights[-1]
            out = k * total + self.cumweights[np.searchsorted(self.locations, z, side="right")]
            if self.diffuse_density:
                out = out + self.diffuse_density * (y - self.lo)
        else:
            out = self.cumweights[np.searchsorted(self.locations, y, side="right")]
            if self.diffuse_density:
                lo, hi = self.diffuse_window
                out = out + self.diffuse_density * (np.clip(y, lo, hi) - lo)
        return out

    def mass_between(self, a: float, b: float) -> float:
        return float(self.F(b) - self.F(a))

    def smoothed_density(self, x, eps: float):
        """Mass of ``(x - eps, x + eps]`` divided by ``2 eps``."""
        return (self.F(np.asarray(x) + eps) - self.F(np.asarray(x) - eps)) / (2.0 * eps)


# ---------------------------------------------------------------------------
# Stable catalyst sampling


@lru_cache(maxsize=None)
def stable_levy_constant(gamma: float) -> float:
    """Constant ``C`` with ``C * int_0^inf r^{-1-gamma}(1-e^{-r}) dr = 1``.

    With Levy density ``C w^{-1-gamma}`` per unit length the Laplace functional
    is ``exp(-int phi^gamma)``.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")

    def f(r):
        # -expm1 keeps precision near r = 0
        return r ** (-1.0 - gamma) * (-math.expm1(-r))

    head, _ = integrate.quad(f, 0.0, 1.0, limit=200)
    tail, _ = integrate.quad(f, 1.0, np.inf, limit=200)
    return 1.0 / (head + tail)


@lru_cache(maxsize=None)
def stable_constant(gamma: float) -> float:
    """Band intensity constant: atoms with weight in ``[2^-n, 2^-n+1)`` form a
    Poisson process of intensity ``stable_constant(gamma) * 2**(gamma*n)``."""
    return (1.0 - 2.0 ** (-gamma)) / gamma * stable_levy_constant(gamma)


def _band_weights(rng: np.random.Generator, n: int, size: int, gamma: float) -> np.ndarray:
    # inverse CDF of w^{-1-gamma} restricted to [2^-n, 2^-n+1)
    a = math.ldexp(1.0, -n)
    lo_g = a ** (-gamma)
    hi_g = (2.0 * a) ** (-gamma)
    u = rng.random(size)
    w = (lo_g - u * (lo_g - hi_g)) ** (-1.0 / gamma)
    return np.clip(w, a, np.nextafter(2.0 * a, 0.0))


def sample_stable_catalyst(
    gamma: float,
    window: Sequence[float],
    weight_floor: float = 1e-8,
    intensity_scale: float = 1.0,
    rng: np.random.Generator | None = None,
    *,
    compensate: bool = False,
) -> AtomicCatalyst:
    """Sample a gamma-stable random measure on the window ``(lo, hi]``.

    Atoms are generated band by band: for ``n >= 1`` the atoms with weight in
    ``[2^-n, 2^-n+1)`` are a Poisson process with intensity
    ``intensity_scale * c_gamma * 2^(gamma n)`` per unit length, weights drawn
    from the normalized density ``w^{-1-gamma}`` on the band.  All atoms of
    weight ``>= 1`` are sampled in one go from the Pareto tail.  Bands whose
    upper edge is ``<= weight_floor`` are omitted.

    With ``compensate=True`` the expected mass of the omitted atoms is added
    back as a constant ``diffuse_density`` on the window.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if not 0 < weight_floor < 1:
        raise ValueError("weight_floor must lie in (0, 1)")
    if not intensity_scale > 0:
        raise ValueError("intensity_scale must be positive")
    lo, hi = _check_window(window)
    length = hi - lo
    rng = np.random.default_rng() if rng is None else rng
    if length == 0:
        return AtomicCatalyst(np.empty(0), np.empty(0), (lo, hi))

    C = stable_levy_constant(gamma)
    c_band = stable_constant(gamma)
    locs, ws = [], []

    # weights >= 1: Poisson(C/gamma * length) atoms with Pareto(gamma) weights
    k = rng.poisson(intensity_scale * C / gamma * length)
    if k:
        ws.append(rng.random(k) ** (-1.0 / gamma))
        locs.append(hi - length * rng.random(k))

    n_last = stable_band_range(weight_floor)
    for n in range(1, n_last + 1):
        k = rng.poisson(intensity_scale * c_band * 2.0 ** (gamma * n) * length)
        if k:
            ws.append(_band_weights(rng, n, k, gamma))
            locs.append(hi - length * rng.random(k))

    diffuse = 0.0
    if compensate:
        w_min = math.ldexp(1.0, -n_last)
        diffuse = intensity_scale * C * w_min ** (1.0 - gamma) / (1.0 - gamma)
    if locs:
        loc = np.concatenate(locs)
        w = np.concatenate(ws)
    else:
        loc = w = np.empty(0)
    return AtomicCatalyst(loc, w, (lo, hi), diffuse_density=diffuse)


def sample_stable_masses(
    gamma: float,
    length: float,
    n_samples: int,
    weight_floor: float = 1e-8,
    intensity_scale: float = 1.0,
    rng: np.random.Generator | None = None,
    *,
    compensate: bool = False,
) -> np.ndarray:
    """Total masses of ``n_samples`` independent catalysts on a window of the
    given length, drawn band by band exactly as in
    :func:`sample_stable_catalyst` but without materializing locations."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if not 0 < weight_floor < 1:
        raise ValueError("weight_floor must lie in (0, 1)")
    rng = np.random.default_rng() if rng is None else rng
    C = stable_levy_constant(gamma)
    c_band = stable_constant(gamma)
    out = np.zeros(n_samples)
    owners = np.arange(n_samples)

    def add(counts, draw):
        # chunk over samples to bound memory
        start = 0
        csum = np.cumsum(counts)
        while start < n_samples:
            base = csum[start - 1] if start else 0
            stop = int(np.searchsorted(csum, base + _CHUNK_ATOMS, side="right"))
            stop = max(stop, start + 1)
            k = counts[start:stop]
            w = draw(int(k.sum()))
            out[start:stop] += np.bincount(np.repeat(owners[: stop - start], k), w, minlength=stop - start)
            start = stop

    counts = rng.poisson(intensity_scale * C / gamma * length, size=n_samples)
    add(counts, lambda k: rng.random(k) ** (-1.0 / gamma))
    n_last = stable_band_range(weight_floor)
    for n in range(1, n_last + 1):
        counts = rng.poisson(intensity_scale * c_band * 2.0 ** (gamma * n) * length, size=n_samples)
        add(counts, lambda k, n=n: _band_weights(rng, n, k, gamma))
    if compensate:
        w_min = math.ldexp(1.0, -n_last)
        out += intensity_scale * C * w_min ** (1.0 - gamma) / (1.0 - gamma) * length
    return out


def stable_band_range(weight_floor: float) -> int:
    """Index of the last dyadic band kept for a given weight floor: band ``n``
    is kept iff its upper edge ``2^{-n+1}`` exceeds the floor."""
    n = 1
    while math.ldexp(1.0, -(n + 1) + 1) > weight_floor:
        n += 1
    return n


def _layer_index(w: np.ndarray) -> np.ndarray:
    # w in [2^-n, 2^-n+1)  <=>  frexp exponent e = 1 - n
    _, e = np.frexp(w)
    return 1 - e


def quantize_and_truncate(cat: AtomicCatalyst, N: int) -> LayeredCatalyst:
    """Drop atoms with weight ``>= 2^{-N+1}`` and round the rest down to the
    dyadic value ``2^-n`` of their band."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    w = cat.weights
    keep = w < math.ldexp(1.0, -N + 1)
    locs = cat.locations[keep]
    n_idx = _layer_index(w[keep])
    layers = {int(n): locs[n_idx == n] for n in np.unique(n_idx)}
    return LayeredCatalyst(layers, N, cat.window, cat.period)


def periodic_extension(cat, K: float):
    """Restrict to ``(-K, K]`` and repeat with period ``2K``."""
    if not K > 0:
        raise ValueError("K must be positive")
    window = (-float(K), float(K))
    if isinstance(cat, AtomicCatalyst):
        loc, w = cat.atoms_in(-K, K)
        return AtomicCatalyst(loc, w, window, 2.0 * K, cat.diffuse_density)
    if isinstance(cat, LayeredCatalyst):
        layers = {}
        for n, pts in cat.layers.items():
            if cat.period is None:
                sel = pts[(pts > -K) & (pts <= K)]
            else:
                sel = unroll_points(pts, cat.period, -K, K)
            layers[n] = sel
        return LayeredCatalyst(layers, cat.n_min, window, 2.0 * K)
    raise TypeError(f"cannot periodize {type(cat).__name__}")


def unroll_points(points, period: float, a: float, b: float, return_index: bool = False):
    """All translates ``p + k*period`` that fall in ``(a, b]``, sorted."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0 or b <= a:
        empty = np.empty(0)
        return (empty, np.empty(0, dtype=int)) if return_index else empty
    k_lo = math.floor((a - pts.max()) / period)
    k_hi = math.ceil((b - pts.min()) / period)
    ks = np.arange(k_lo, k_hi + 1)
    grid = pts[None, :] + period * ks[:, None]
    idx = np.broadcast_to(np.arange(pts.size), grid.shape)
    sel = (grid > a) & (grid <= b)
    vals, idx = grid[sel], idx[sel]
    order = np.argsort(vals, kind="stable")
    return (vals[order], idx[order]) if return_index else vals[order]


def max_gap(points, window: Sequence[float], period: float | None = None) -> float:
    """Largest distance between neighbouring points inside the window.

    With a period the wrap-around gap is included; a single point then has gap
    equal to the period.
    """
    lo, hi = _check_window(window)
    pts = np.sort(np.asarray(points, dtype=float).reshape(-1))
    pts = pts[(pts >= lo) & (pts <= hi)]
    if pts.size == 0:
        raise UnboundedGapError("no points in window: gap is unbounded")
    gaps = np.diff(pts)
    g = float(gaps.max()) if gaps.size else 0.0
    if period is not None:
        g = max(g, float(pts[0] + period - pts[-1]))
    return g


# ---------------------------------------------------------------------------
# Lattice catalysts


def sample_lattice_catalyst(
    d: int,
    n: int,
    rng: np.random.Generator,
    *,
    max_sites: int = MAX_LATTICE_SITES,
) -> LatticeCatalyst:
    """Independent uniform(0,1) values on every site of the cube ``D_n``."""
    if d < 1 or n < 0:
        raise ValueError("need d >= 1 and n >= 0")
    side = (1 << (n + 1)) + 1
    if side**d > max_sites:
        raise MemoryError(f"cube D_{n} in d={d} has {side**d} sites, cap is {max_sites}")
    vals = rng.random((side,) * d)
    zero = vals == 0.0
    while zero.any():
        vals[zero] = rng.random(int(zero.sum()))
        zero = vals == 0.0
    return LatticeCatalyst(d, n, vals, 1.0)


def low_cluster_sizes(cat: LatticeCatalyst, zeta: float) -> np.ndarray:
    """Sizes of the nearest-neighbour clusters of sites with value <= zeta."""
    low = cat.values <= zeta
    structure = ndimage.generate_binary_structure(cat.dim, 1)
    labels, k = ndimage.label(low, structure=structure)
    if k == 0:
        return np.empty(0, dtype=int)
    return np.bincount(labels.ravel())[1:]


def cluster_event(cat: LatticeCatalyst, m: int, zeta: float) -> bool:
    """True iff no connected set of ``m`` cube sites has all values <= zeta.

    A connected set of size ``m`` exists iff some low cluster has at least
    ``m`` sites.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    sizes = low_cluster_sizes(cat, zeta)
    return not (sizes.size and sizes.max() >= m)


def _neighbours(site: tuple[int, ...]) -> Iterable[tuple[int, ...]]:
    for i in range(len(site)):
        for s in (-1, 1):
            yield site[:i] + (site[i] + s,) + site[i + 1:]


@lru_cache(maxsize=None)
def count_lattice_animals(m: int, d: int) -> int:
    """Number of connected site sets of cardinality ``m`` in ``Z^d`` that
    contain the origin (brute-force enumeration)."""
    if m < 1 or d < 1:
        raise ValueError("need m >= 1 and d >= 1")
    origin = (0,) * d
    current = {frozenset([origin])}
    for _ in range(m - 1):
        nxt = set()
        for animal in current:
            for site in animal:
                for nb in _neighbours(site):
                    if nb not in animal:
                        nxt.add(animal | {nb})
        current = nxt
    return len(current)


# ---------------------------------------------------------------------------
# JSON serialization


def _enc(x: float, hex_floats: bool):
    return float(x).hex() if hex_floats else float(x)


def _dec(x) -> float:
    return float.fromhex(x) if isinstance(x, str) else float(x)


def catalyst_to_dict(cat, hex_floats: bool = False) -> dict:
    e = lambda x: _enc(x, hex_floats)  # noqa: E731
    if isinstance(cat, AtomicCatalyst):
        return {
            "kind": "atomic",
            "params": {
                "window": [e(cat.window[0]), e(cat.window[1])],
                "period": None if cat.period is None else e(cat.period),
                "diffuse_density": e(cat.diffuse_density),
            },
            "atoms": [[e(b), e(w)] for b, w in zip(cat.locations, cat.weights)],
        }
    if isinstance(cat, LayeredCatalyst):
        return {
            "kind": "layered",
            "params": {
                "n_min": cat.n_min,
                "window": [e(cat.window[0]), e(cat.window[1])],
                "period": None if cat.period is None else e(cat.period),
            },
            "layers": {str(n): [e(b) for b in pts] for n, pts in cat.layers.items()},
        }
    if isinstance(cat, DensityCatalyst):
        return {
            "kind": "density",
            "params": {
                "density": cat.kind,
                "q": e(cat.q),
                "level": e(cat.level),
                "gap": [e(cat.gap[0]), e(cat.gap[1])],
            },
        }
    if isinstance(cat, LatticeCatalyst):
        return {
            "kind": "lattice",
            "params": {
                "dim": cat.dim,
                "radius_exponent": cat.radius_exponent,
                "outside_default": e(cat.outside_default),
            },
            "values": [e(v) for v in cat.values.ravel()],
        }
    raise TypeError(f"not a catalyst: {type(cat).__name__}")


def catalyst_from_dict(doc: dict):
    kind = doc["kind"]
    p = doc.get("params", {})
    if kind == "atomic":
        atoms = np.array([[_dec(b), _dec(w)] for b, w in doc["atoms"]]).reshape(-1, 2)
        period = p.get("period")
        return AtomicCatalyst(
            atoms[:, 0],
            atoms[:, 1],
            (_dec(p["window"][0]), _dec(p["window"][1])),
            None if period is None else _dec(period),
            _dec(p.get("diffuse_density", 0.0)),
        )
    if kind == "layered":
        period = p.get("period")
        layers = {int(n): np.array([_dec(b) for b in pts]) for n, pts in doc["layers"].items()}
        return LayeredCatalyst(
            layers,
            int(p["n_min"]),
            (_dec(p["window"][0]), _dec(p["window"][1])),
            None if period is None else _dec(period),
        )
    if kind == "density":
        return DensityCatalyst(
            p["density"], _dec(p["q"]), _dec(p["level"]), (_dec(p["gap"][0]), _dec(p["gap"][1]))
        )
    if kind == "lattice":
        d, n = int(p["dim"]), int(p["radius_exponent"])
        side = (1 << (n + 1)) + 1
        vals = np.array([_dec(v) for v in doc["values"]]).reshape((side,) * d)
        return LatticeCatalyst(d, n, vals, _dec(p["outside_default"]))
    raise ValueError(f"unknown catalyst kind {kind!r}")


def dumps(cat, hex_floats: bool = False, **kwargs) -> str:
    return json.dumps(catalyst_to_dict(cat, hex_floats), **kwargs)


def loads(text: str):
    return catalyst_from_dict(json.loads(text))
