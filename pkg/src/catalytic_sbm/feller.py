"""Feller's branching diffusion ``dZ = sqrt(2 Z) dB``: exact transitions,
path simulation and the closed-form survival probability."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FellerState",
    "feller_step_exact",
    "feller_steps_exact",
    "feller_step_euler",
    "survival_probability",
    "survival_bound",
    "extinction_probability",
    "simulate_feller_path",
    "simulate_feller_paths",
    "laplace_transform",
]


@dataclass(frozen=True)
class FellerState:
    z: float
    r: float = 0.0

    def __post_init__(self):
        if self.z < 0 or self.r < 0:
            raise ValueError("mass and clock must be nonnegative")


def laplace_transform(z: float, theta: float, dr: float) -> float:
    """``E exp(-theta Z_dr)`` from ``Z_0 = z``."""
    return math.exp(-z * theta / (1.0 + theta * dr))


def feller_step_exact(z: float, dr: float, rng: np.random.Generator) -> float:
    """Draw ``Z_{r+dr}`` given ``Z_r = z``: Poisson(z/dr) clusters, each an
    exponential with mean ``dr`` (the sum is Gamma(k, dr))."""
    if not dr > 0:
        raise ValueError("dr must be positive")
    if z <= 0:
        return 0.0
    k = rng.poisson(z / dr)
    return 0.0 if k == 0 else float(rng.gamma(k, dr))


def feller_steps_exact(z, dr: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`feller_step_exact` over an array of current masses."""
    if not dr > 0:
        raise ValueError("dr must be positive")
    z = np.asarray(z, dtype=float)
    k = rng.poisson(np.maximum(z, 0.0) / dr)
    out = np.zeros(z.shape)
    pos = k > 0
    out[pos] = rng.gamma(k[pos], dr)
    return out


def feller_step_euler(z: float, dr: float, rng: np.random.Generator) -> float:
    """Euler step clipped at 0; biased near the boundary, kept for cross-checks."""
    if not dr > 0:
        raise ValueError("dr must be positive")
    if z <= 0:
        return 0.0
    return max(0.0, z + math.sqrt(2.0 * z * dr) * rng.standard_normal())


def survival_probability(z0: float, xi: float) -> float:
    """``P(Z_xi > 0 | Z_0 = z0) = 1 - exp(-z0 / xi)``."""
    if not xi > 0:
        raise ValueError("xi must be positive")
    if z0 < 0:
        raise ValueError("z0 must be nonnegative")
    return -math.expm1(-z0 / xi)


def survival_bound(z0: float, xi: float) -> float:
    """Linear upper bound ``z0 / xi`` on the survival probability."""
    if not xi > 0:
        raise ValueError("xi must be positive")
    return z0 / xi


def extinction_probability(z0: float, t: float) -> float:
    return 1.0 - survival_probability(z0, t)


def simulate_feller_path(z0: float, r_grid, rng: np.random.Generator, *, euler: bool = False) -> np.ndarray:
    """States at each point of ``r_grid`` (increasing, starting at 0)."""
    r = np.asarray(r_grid, dtype=float)
    if r.size == 0 or r[0] != 0 or np.any(np.diff(r) <= 0):
        raise ValueError("r_grid must start at 0 and increase strictly")
    step = feller_step_euler if euler else feller_step_exact
    out = np.empty(r.size)
    out[0] = z = float(z0)
    for i in range(1, r.size):
        z = step(z, r[i] - r[i - 1], rng) if z > 0 else 0.0
        out[i] = z
    return out


def simulate_feller_paths(z0: float, r_grid, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    """Exact paths as an array of shape ``(n_paths, len(r_grid))``."""
    r = np.asarray(r_grid, dtype=float)
    if r.size == 0 or r[0] != 0 or np.any(np.diff(r) <= 0):
        raise ValueError("r_grid must start at 0 and increase strictly")
    out = np.empty((n_paths, r.size))
    out[:, 0] = z0
    for i in range(1, r.size):
        out[:, i] = feller_steps_exact(out[:, i - 1], r[i] - r[i - 1], rng)
    return out
