"""Finite-difference solver for the log-Laplace equation
``-dv/ds = v''/2 - chi v^2``, ``v(t, .) = theta``, and the extinction
probabilities ``exp(-lim_theta v_theta(0, a))`` it encodes."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .catalyst import AtomicCatalyst, LatticeCatalyst, LayeredCatalyst

__all__ = [
    "PdeGrid",
    "VField",
    "StabilityError",
    "NonMonotoneSweep",
    "solve_loglaplace",
    "ExtinctionSweep",
    "extinction_sweep",
    "extinction_prob_pde",
    "richardson_limit",
    "gap_decay_rate",
    "grid_convergence",
]

MODES = ("explicit", "crank_nicolson", "implicit")
RANNACHER_STEPS = 4  # implicit start steps that damp the terminal-data kink under Crank-Nicolson
GROWTH = 1.1  # ratio between consecutive graded time steps


class StabilityError(ValueError):
    pass


class NonMonotoneSweep(RuntimeError):
    pass


@dataclass(frozen=True)
class PdeGrid:
    """Uniform grid ``a + h j`` for ``|j| <= half_width`` with time step ``k``.

    The domain is centred on the evaluation point so that it is a node.
    Boundaries are reflecting (Neumann).
    """

    h: float
    k: float
    half_width: int
    center: float = 0.0
    mode: str = "crank_nicolson"
    bc: str = "neumann"

    def __post_init__(self):
        if not (self.h > 0 and self.k > 0 and self.half_width >= 1):
            raise ValueError("h, k and half_width must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.bc != "neumann":
            raise ValueError("only Neumann boundaries are implemented")
        if self.mode == "explicit" and self.k > self.h**2 * (1 + 1e-12):
            raise StabilityError(f"explicit diffusion needs k <= h^2 (k={self.k}, h^2={self.h ** 2})")

    @classmethod
    def for_problem(cls, t: float, a: float = 0.0, h: float = 0.01, k: float | None = None,
                    mode: str = "crank_nicolson", pad: float = 6.0, extra: float = 0.0) -> "PdeGrid":
        """Domain reaching ``pad * sqrt(t) + extra`` beyond ``a``; ``k`` defaults
        to ``h^2`` in explicit mode and ``h/4`` otherwise."""
        if k is None:
            k = h * h if mode == "explicit" else h / 4
        return cls(h, k, int(math.ceil((pad * math.sqrt(t) + extra) / h)), float(a), mode)

    @property
    def x(self) -> np.ndarray:
        return self.center + self.h * np.arange(-self.half_width, self.half_width + 1)

    @property
    def A(self) -> float:
        return self.h * self.half_width

    def time_steps(self, t: float) -> tuple[np.ndarray, int]:
        """Backward step sizes summing to ``t``.

        Steps start at ``min(k, h^2)/16`` and grow geometrically by
        ``GROWTH`` up to ``k``: near the terminal time the field jumps from
        ``theta`` to ``O(1/(chi s))`` and needs fine steps there.  Also
        returns the number of graded steps.
        """
        k0 = min(self.k, self.h**2) / 16.0
        steps = []
        total, k = 0.0, k0
        while k < self.k and total + k < t:
            steps.append(k)
            total += k
            k *= GROWTH
        rest = t - total
        n = max(1, int(math.ceil(rest / self.k - 1e-9)))
        graded = len(steps)
        steps.extend([rest / n] * n)
        return np.array(steps), graded


@dataclass(frozen=True)
class VField:
    """``values[i, j] = v(s[i], x[j])``; ``s`` runs from ``t`` down to 0."""

    s: np.ndarray
    x: np.ndarray
    values: np.ndarray
    theta: float
    t: float
    grid: PdeGrid

    def at_start(self) -> np.ndarray:
        return self.values[-1]

    def value(self, a: float | None = None) -> float:
        """``v(0, a)``; the grid centre by default."""
        if a is None:
            return float(self.values[-1, self.grid.half_width])
        return float(np.interp(a, self.x, self.values[-1]))

    def check_invariants(self, rtol: float = 1e-12) -> list[str]:
        problems = []
        if np.any(self.values < 0):
            problems.append(f"negative values (min {self.values.min():.3g})")
        if np.any(self.values > self.theta * (1 + rtol)):
            problems.append(f"values above theta (max {self.values.max():.6g})")
        return problems

    def to_csv(self, fh, every: int = 1) -> None:
        w = csv.writer(fh)
        w.writerow(["s", "b", "v"])
        for i in range(0, self.s.size, every):
            for b, v in zip(self.x, self.values[i]):
                w.writerow([repr(float(self.s[i])), repr(float(b)), repr(float(v))])


def _density(cat, x: np.ndarray) -> np.ndarray:
    if isinstance(cat, (AtomicCatalyst, LayeredCatalyst, LatticeCatalyst)):
        raise TypeError("the log-Laplace solver takes bounded densities only; atomic and lattice "
                        "catalysts go through the particle system")
    chi = np.broadcast_to(np.asarray(cat(x), dtype=float), x.shape).copy()
    if np.any(chi < 0) or not np.all(np.isfinite(chi)):
        raise ValueError("catalyst density must be finite and nonnegative")
    return chi


def _laplacian_bands(n: int, c: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tridiagonal ``c * D2`` with reflecting ends: (sub, diag, super)."""
    sub = np.full(n - 1, c)
    sup = np.full(n - 1, c)
    diag = np.full(n, -2.0 * c)
    sup[0] = 2.0 * c
    sub[-1] = 2.0 * c
    return sub, diag, sup


def _apply(sub, diag, sup, v):
    out = diag * v
    out[:-1] += sup * v[1:]
    out[1:] += sub * v[:-1]
    return out


def _banded(sub, diag, sup, scale: float) -> np.ndarray:
    """``I - scale * L`` in ``solve_banded`` layout."""
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = -scale * sup
    ab[1] = 1.0 - scale * diag
    ab[2, :-1] = -scale * sub
    return ab


def solve_loglaplace(cat, theta: float, t: float, grid: PdeGrid, save_every: int | None = None) -> VField:
    """March ``v`` backward from ``v(t) = theta`` to ``s = 0`` by Strang splitting:
    half a reaction step ``v <- v / (1 + chi v k/2)`` (the exact solution of
    ``v' = -chi v^2``), a diffusion step, and another reaction half step."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    if not t > 0:
        raise ValueError("t must be positive")
    x = grid.x
    chi = _density(cat, x)
    steps, graded = grid.time_steps(t)
    n = steps.size
    if grid.mode == "explicit" and steps.max() > grid.h**2 * (1 + 1e-12):
        raise StabilityError("explicit diffusion needs k <= h^2")
    every = save_every or max(1, n // 200)
    sub, diag, sup = _laplacian_bands(x.size, 0.5 / grid.h**2)
    factor = {}

    def solve(scale, rhs):
        ab = factor.get(scale)
        if ab is None:
            ab = factor[scale] = _banded(sub, diag, sup, scale)
        return solve_banded((1, 1), ab, rhs, check_finite=False)

    v = np.full(x.size, float(theta))
    saved_s, saved = [t], [v.copy()]
    elapsed = 0.0
    for step, k in enumerate(steps):
        half = 0.5 * k
        v = v / (1.0 + chi * v * half)
        if grid.mode == "explicit":
            v = v + k * _apply(sub, diag, sup, v)
        elif grid.mode == "implicit":
            v = solve(k, v)
        elif step < graded + RANNACHER_STEPS:
            # graded and start-up steps: two implicit half steps keep the kink damped
            v = solve(half, solve(half, v))
        else:
            v = solve(half, v + half * _apply(sub, diag, sup, v))
        v = v / (1.0 + chi * v * half)
        elapsed += k
        if (step + 1) % every == 0 or step + 1 == n:
            saved_s.append(t - elapsed)
            saved.append(v.copy())
    saved_s[-1] = 0.0
    return VField(np.array(saved_s), x, np.array(saved), float(theta), float(t), grid)


def richardson_limit(thetas, values) -> tuple[float, float, float]:
    """Limit of ``v_theta`` assuming ``v_inf - v_theta ~ c theta^-p`` with the
    order ``p`` fitted from the last three points of a geometric sweep
    (Aitken's delta-squared).  Returns ``(limit, error indicator, p)``; the
    indicator is the change against the estimate from the preceding triple.
    With ``p = 1`` this is the classical Richardson step in ``1/theta``."""
    th = np.asarray(thetas, dtype=float)
    v = np.asarray(values, dtype=float)
    if th.size < 3:
        raise ValueError("need at least three sweep points")

    def triple(j):
        d1, d2 = v[j - 1] - v[j - 2], v[j] - v[j - 1]
        if d2 == 0.0:
            return v[j], math.inf
        r = d2 / d1 if d1 != 0.0 else math.inf
        if not 0.0 <= r < 1.0:
            return math.inf, 0.0
        p = -math.log(r) / math.log(th[j] / th[j - 1]) if r > 0 else math.inf
        return v[j] + d2 * r / (1.0 - r), p

    est, p = triple(th.size - 1)
    prev = triple(th.size - 2)[0] if th.size >= 4 else math.nan
    return float(est), float(abs(est - prev)), float(p)


@dataclass
class ExtinctionSweep:
    thetas: list[float]
    values: list[float]
    v_inf: float
    v_inf_err: float
    divergent: bool
    probability: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"thetas": self.thetas, "v_theta": self.values, "v_inf": self.v_inf, "v_inf_err": self.v_inf_err,
                "divergent": self.divergent, "extinction_probability": self.probability, **self.diagnostics}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def extinction_sweep(cat, t: float, a: float, theta_sweep, h: float = 0.01, k: float | None = None,
                     mode: str = "crank_nicolson", tol: float = 1e-10) -> ExtinctionSweep:
    """Evaluate ``v_theta(0, a)`` along an increasing sweep spanning at least
    three decades and extrapolate to ``theta = inf``.

    When the increments do not shrink (``v_theta`` keeps growing in
    proportion to ``theta``) the limit is infinite and the extinction
    probability is 0.
    """
    thetas = [float(th) for th in theta_sweep]
    if len(thetas) < 3 or any(b <= a_ for a_, b in zip(thetas, thetas[1:])):
        raise ValueError("need an increasing sweep with at least three values")
    if thetas[-1] / thetas[0] < 1e3 * (1 - 1e-12):
        raise ValueError("the sweep must cover at least three decades")
    ratios = np.diff(np.log(thetas))
    if np.ptp(ratios) > 1e-9 * ratios.mean():
        raise ValueError("the sweep must be geometric")
    grid = PdeGrid.for_problem(t, a, h, k, mode)
    values = []
    for th in thetas:
        values.append(solve_loglaplace(cat, th, t, grid, save_every=10**9).value())
    for v1, v2 in zip(values, values[1:]):
        if v2 < v1 - tol * max(1.0, abs(v1)):
            raise NonMonotoneSweep(f"v_theta decreased along the sweep: {values}")
    v_inf, err, order = richardson_limit(thetas, values)
    # increments that do not shrink mean v_theta grows without bound
    divergent = not math.isfinite(v_inf)
    prob = math.exp(-v_inf)
    diag = {"h": grid.h, "k": grid.k, "mode": mode, "domain_half_width": grid.A, "t": t, "a": a,
            "fitted_order": order}
    return ExtinctionSweep(thetas, values, v_inf, err, divergent, prob, diag)


def extinction_prob_pde(cat, t: float, a: float, theta_sweep, **kwargs) -> float:
    """``exp(-v_inf(0, a | t))`` with ``v_inf`` extrapolated along ``theta_sweep``."""
    return extinction_sweep(cat, t, a, theta_sweep, **kwargs).probability


def gap_decay_rate(cat, t_values, theta: float = 1e9, a: float = 0.0, h: float = 0.02,
                   k: float | None = None, mode: str = "explicit") -> dict:
    """Exponential decay rate of ``v_theta(0, a | t)`` in ``t`` for large ``theta``.

    Inside a catalyst-free interval the field is ``theta`` times the
    probability of staying in the interval, so the rate estimates the first
    Dirichlet eigenvalue of ``-1/2 d^2/dx^2`` there.  Split schemes with
    ``k >> h^2`` let the huge interior field leak a distance ``~sqrt(k)`` into
    the catalyst each step and bias the rate low, hence the explicit default;
    a large ``theta`` keeps the absorbing boundary layer (width
    ``~(3/v)^{1/2}``) thin.
    """
    t_values = np.asarray(t_values, dtype=float)
    grid_t = float(t_values.max())
    vals = []
    for t in t_values:
        grid = PdeGrid.for_problem(grid_t, a, h, k, mode)
        vals.append(solve_loglaplace(cat, theta, float(t), grid, save_every=10**9).value())
    vals = np.array(vals)
    slope, intercept = np.polyfit(t_values, np.log(vals), 1)
    resid = np.log(vals) - (slope * t_values + intercept)
    return {"rate": float(-slope), "t": t_values.tolist(), "v": vals.tolist(),
            "max_residual": float(np.abs(resid).max()), "theta": theta, "h": h}


def grid_convergence(cat, theta: float, t: float, a: float = 0.0, h0: float = 0.04, k0: float | None = None,
                     levels: int = 3, mode: str = "crank_nicolson") -> dict:
    """``v(0, a)`` under successive halvings of ``h`` and ``k``, with the
    ratios of successive changes and the implied convergence order."""
    if levels < 3:
        raise ValueError("need at least three levels")
    k0 = k0 if k0 is not None else (h0 * h0 if mode == "explicit" else h0)
    vals = []
    for lev in range(levels):
        h, k = h0 / 2**lev, k0 / 2**lev
        if mode == "explicit":
            k = min(k, h * h)
        grid = PdeGrid.for_problem(t, a, h, k, mode)
        vals.append(solve_loglaplace(cat, theta, t, grid, save_every=10**9).value())
    diffs = np.abs(np.diff(vals))
    ratios = diffs[:-1] / np.maximum(diffs[1:], 1e-300)
    return {"values": vals, "changes": diffs.tolist(), "ratios": ratios.tolist(),
            "order": np.log2(ratios).tolist(), "h0": h0, "k0": k0, "mode": mode}
