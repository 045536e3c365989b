"""Stage schedules ``T_n, M_n, xi_n, delta_n, lambda_n`` for the three
catalyst models and numeric checks of the vanishing conditions (b1)/(b2)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .motion import Cube
from .particles import StoppingRule, exit_region, fixed_time, min_of

__all__ = [
    "StageSchedule",
    "parabolic_schedule",
    "dense_point_schedule",
    "lattice_schedule",
    "verify_hypothesis_b",
    "HypothesisReport",
    "series_remainder",
    "dense_zeta",
]

DEFAULT_N_MAX = 60


@dataclass(frozen=True)
class StageSchedule:
    """Stage quantities for ``n = N, ..., n_max``.

    ``T`` holds the deterministic stage start times.  For the lattice model
    they are the deterministic parts of the stopped times ``T_n``; the full
    descriptors ``min(T_n, exit time of D_n)`` are in ``stop_rules``.
    """

    model: str
    epsilon: float
    N: int
    n: np.ndarray
    T: np.ndarray
    M: np.ndarray
    xi: np.ndarray
    delta: np.ndarray
    lam: np.ndarray
    delta_prev: float  # delta_{N-1}
    T_inf: float
    dT: np.ndarray  # T_{n+1} - T_n, kept separately since T_n saturates in binary64
    log_lam: np.ndarray  # lambda_n underflows long before its logarithm does
    params: dict = field(default_factory=dict)
    stop_rules: tuple[StoppingRule, ...] = ()
    xi_prev: float | None = None  # xi_{N-1} where the model defines it

    def b2_sum(self) -> float:
        """``delta_{N-1} + sum_n (delta_n + lambda_n)`` over the stored range."""
        return float(self.delta_prev + self.delta.sum() + self.lam.sum())

    def remainders(self) -> dict:
        return {"delta": series_remainder(self.delta), "lambda": series_remainder(self.lam),
                "T": series_remainder(self.dT)}

    def to_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["n", "T_n", "M_n", "xi_n", "delta_n", "lambda_n"])
        for row in zip(self.n, self.T, self.M, self.xi, self.delta, self.lam):
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])

    def check_invariants(self) -> list[str]:
        """Structural problems (empty list when the schedule is well formed)."""
        problems = []
        if np.any(~(self.dT > 0)):
            problems.append("T_n not strictly increasing")
        if not math.isfinite(self.T_inf) or np.any(self.T + self.dT > self.T_inf * (1 + 1e-12)):
            problems.append("T_n not below a finite T_inf")
        for name in ("M", "xi", "delta"):
            if np.any(~(getattr(self, name) > 0)):
                problems.append(f"{name} has non-positive entries")
        if np.any(np.isnan(self.log_lam)) or np.any(self.log_lam == -math.inf):
            problems.append("lam has non-positive entries")
        if np.any(np.diff(self.M) > 0):
            problems.append("M_n increases")
        return problems


def series_remainder(terms: np.ndarray) -> float:
    """Bound on the tail beyond the last term, assuming the ratio of the last
    two terms persists.  ``inf`` flags a series that does not visibly converge."""
    terms = np.asarray(terms, dtype=float)
    if terms.size == 0 or terms[-1] == 0.0:
        return 0.0
    if terms.size < 2 or terms[-2] == 0.0:
        return math.inf
    r = terms[-1] / terms[-2]
    if not r < 1.0:
        return math.inf
    return float(terms[-1] * r / (1.0 - r))


def _require(cond: bool, msg: str, validate: bool) -> None:
    if validate and not cond:
        raise ValueError(msg)


def parabolic_schedule(alpha: float, beta: float, q: float, epsilon: float, c0: float,
                       n_max: int = DEFAULT_N_MAX, *, validate: bool = True) -> StageSchedule:
    """Stages for the parabolic catalyst ``|b|^q ^ 1``.

    ``theta_n = e^{-alpha n}``, ``M_n = e^{-(1+beta+alpha q) n}``,
    ``t_n = e^{-beta n} / eps``, ``xi_n = t_n theta_n^q / 2``,
    ``delta_n = M_n / xi_n``, ``lambda_n = (M_n/M_{n+1}) exp(-c0 t_n / theta_n^2)``.
    ``validate=False`` skips the parameter-range checks (negative controls).
    """
    _require(alpha > 0, "alpha must be positive", validate)
    _require(0 < beta < 2 * alpha, "beta must lie in (0, 2 alpha)", validate)
    _require(q > 0, "q must be positive", validate)
    _require(0 < epsilon < 1, "epsilon must lie in (0, 1)", validate)
    if not c0 > 0:
        raise ValueError("c0 must be a positive calibrated constant")
    n = np.arange(0, n_max + 1)
    theta = np.exp(-alpha * n)
    M = np.exp(-(1.0 + beta + alpha * q) * n)
    t = np.exp(-beta * n) / epsilon
    xi = 0.5 * t * theta**q
    delta = M / xi
    log_lam = (1.0 + beta + alpha * q) - c0 * t / theta**2
    lam = np.exp(log_lam)
    T = np.concatenate([[0.0], np.cumsum(t)[:-1]])
    T_inf = 1.0 / (epsilon * (1.0 - math.exp(-beta))) if beta > 0 else math.inf
    return StageSchedule("parabolic", epsilon, 0, n, T, M, xi, delta, lam, epsilon, T_inf, t, log_lam,
                         {"alpha": alpha, "beta": beta, "q": q, "c0": c0, "t": t, "theta": theta})


def dense_zeta(m: np.ndarray, s: np.ndarray, Delta: np.ndarray, c0: float) -> np.ndarray:
    """Hitting-delay bound ``zeta_n = m_n exp(-c0 s_n / Delta_n^2) / c0``."""
    return m / c0 * np.exp(-c0 * s / Delta**2)


def dense_point_schedule(alpha: float, beta: float, epsilon: float, N: int, a: float, c0: float, c1: float,
                         n_max: int = DEFAULT_N_MAX, *, validate: bool = True) -> StageSchedule:
    """Stages for a layered point catalyst whose layer ``n`` has gaps at most
    ``Delta_n = e^{-beta n}``.

    ``m_n = floor(e^{alpha n}/eps)``, ``s_n = e^{-beta n}/eps^2``,
    ``t_n = 2 m_n s_n``, ``M_n = 2^-n``, ``xi_n = a m_n s_n^{1/2} 2^-n``,
    ``lambda_n = (M_n/M_{n+1}) (zeta_n + exp(-2 c1 m_n))``, ``delta_{N-1} = eps``.
    """
    _require(0 < beta < 1, "beta must lie in (0, 1)", validate)
    _require(beta / 2 < alpha < beta, "alpha must lie in (beta/2, beta)", validate)
    _require(0 < epsilon < 1, "epsilon must lie in (0, 1)", validate)
    if N < 0:
        raise ValueError("N must be nonnegative")
    for name, v in (("a", a), ("c0", c0), ("c1", c1)):
        if not v > 0:
            raise ValueError(f"{name} must be a positive calibrated constant")
    n = np.arange(N, n_max + 1)
    m = np.floor(np.exp(alpha * n) / epsilon)
    s = np.exp(-beta * n) / epsilon**2
    t = 2.0 * m * s
    M = np.ldexp(1.0, -n)
    Delta = np.exp(-beta * n)
    zeta = dense_zeta(m, s, Delta, c0)
    xi = a * m * np.sqrt(s) * np.ldexp(1.0, -n)
    delta = M / xi
    log_lam = math.log(2.0) + np.logaddexp(np.log(m / c0) - c0 * s / Delta**2, -2.0 * c1 * m)
    lam = np.exp(log_lam)
    T = np.concatenate([[0.0], np.cumsum(t)[:-1]])
    T_inf = float(t.sum() + _dense_time_tail(alpha, beta, epsilon, n_max + 1))
    return StageSchedule("dense_point", epsilon, N, n, T, M, xi, delta, lam, epsilon, T_inf, t, log_lam,
                         {"alpha": alpha, "beta": beta, "a": a, "c0": c0, "c1": c1, "m": m, "s": s, "t": t,
                          "Delta": Delta, "zeta": zeta})


def _dense_time_tail(alpha: float, beta: float, epsilon: float, n0: int, max_terms: int = 100_000) -> float:
    """``sum_{n >= n0} 2 m_n s_n`` by direct summation until the terms are
    negligible, then a geometric bound from ``m_n <= e^{alpha n}/eps``."""
    if not alpha < beta:
        return math.inf
    k = np.arange(n0, n0 + max_terms)
    log_x = alpha * k - math.log(epsilon)  # log of e^{alpha k}/eps
    x = np.exp(np.minimum(log_x, 50.0))
    frac = np.where(log_x < 50.0, np.floor(x) / x, 1.0)  # floor(x)/x, 1 to round-off beyond e^50
    terms = 2.0 / epsilon**3 * np.exp((alpha - beta) * k) * frac
    total = math.fsum(terms)
    r = math.exp(alpha - beta)
    return total + 2.0 / epsilon**3 * math.exp((alpha - beta) * (n0 + max_terms)) / (1.0 - r)


def lattice_schedule(N: int, d: int, alpha_hat: float, n_max: int = DEFAULT_N_MAX) -> StageSchedule:
    """Stages for the super-random walk in an i.i.d. uniform medium.

    ``M_n = 2^{-n(d+3)}``, ``lambda_n = 2^{-2^n}``, ``delta_n = 2^-n``,
    ``xi_n = 2^{-n(d+2)}``, ``delta_{N-1} = 2^{-N/4}``,
    ``xi_{N-1} = (alpha_hat/6) 2^{N/2}``.  Stage starts are stopped:
    ``T_N = 2^N/6 ^ tau_N`` and ``T_{n+1} = (T_n + 2^-n) ^ tau_{n+1}``; ``T``
    stores the deterministic parts and ``stop_rules`` the cube radii.
    The schedule's ``epsilon`` is set to ``delta_{N-1}``.
    """
    if N < 1 or d < 1:
        raise ValueError("need N >= 1 and d >= 1")
    if not alpha_hat > 0:
        raise ValueError("alpha_hat must be a positive calibrated constant")
    n = np.arange(N, n_max + 1)
    M = np.ldexp(1.0, -n * (d + 3))
    xi = np.ldexp(1.0, -n * (d + 2))
    delta = np.ldexp(1.0, -n)
    log_lam = -np.ldexp(1.0, n) * math.log(2.0)
    lam = np.exp(log_lam)
    T = math.ldexp(1.0, N) / 6.0 + np.concatenate([[0.0], np.cumsum(np.ldexp(1.0, -n))[:-1]])
    T_inf = math.ldexp(1.0, N) / 6.0 + math.ldexp(1.0, 1 - N)
    delta_prev = 2.0 ** (-N / 4.0)
    rules = tuple(min_of(fixed_time(Tk), exit_region(cube_radius=Cube.D(int(k)).radius)) for k, Tk in zip(n, T))
    return StageSchedule("lattice", delta_prev, N, n, T, M, xi, delta, lam, delta_prev, T_inf,
                         np.ldexp(1.0, -n), log_lam,
                         {"d": d, "alpha_hat": alpha_hat}, rules, alpha_hat / 6.0 * 2.0 ** (N / 2.0))


@dataclass
class HypothesisReport:
    epsilons: list[float]
    b2_sums: list[float]
    b1_ok: bool
    b2_decreasing: bool
    decay_order: float
    flags: list[str]

    @property
    def ok(self) -> bool:
        return self.b1_ok and self.b2_decreasing and not self.flags

    def to_dict(self) -> dict:
        return {"epsilons": self.epsilons, "b2_sums": self.b2_sums, "b1_ok": self.b1_ok,
                "b2_decreasing": self.b2_decreasing, "decay_order": self.decay_order, "flags": self.flags,
                "ok": self.ok}


def verify_hypothesis_b(schedules, m_floor: float = 1e-9, rel_tol: float = 1e-2) -> HypothesisReport:
    """(b1): every ``M_n`` sequence is non-increasing and drops below
    ``m_floor``.  (b2): the sum ``delta_{N-1} + sum(delta_n + lambda_n)``
    shrinks with ``epsilon``; the fitted log-log slope is the decay order.
    A series is flagged when its tail bound is infinite or exceeds
    ``rel_tol`` times its partial sum."""
    scheds = sorted(schedules, key=lambda s: -s.epsilon)
    if len(scheds) < 2:
        raise ValueError("need at least two schedules")
    flags = []
    b1 = True
    for s in scheds:
        if np.any(np.diff(s.M) > 0) or not s.M[-1] < m_floor:
            b1 = False
        for name, arr in (("delta", s.delta), ("lambda", s.lam)):
            rem = series_remainder(arr)
            if not np.all(np.isfinite(arr)) or not rem <= rel_tol * arr.sum():
                flags.append(f"eps={s.epsilon:g}: {name} series does not converge")
        flags.extend(f"eps={s.epsilon:g}: {p}" for p in s.check_invariants())
    sums = [s.b2_sum() for s in scheds]
    eps = [s.epsilon for s in scheds]
    decreasing = all(b < a for a, b in zip(sums, sums[1:])) and all(math.isfinite(x) for x in sums)
    if all(x > 0 and math.isfinite(x) for x in sums):
        order = float(np.polyfit(np.log(eps), np.log(sums), 1)[0])
    else:
        order = math.nan
    return HypothesisReport(eps, sums, b1, decreasing, order, flags)
