import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from catalytic_sbm.feller import (
    FellerState,
    extinction_probability,
    feller_step_euler,
    feller_step_exact,
    feller_steps_exact,
    laplace_transform,
    simulate_feller_path,
    simulate_feller_paths,
    survival_bound,
    survival_probability,
)


def test_exact_step_extinction_at_one():
    rng = np.random.default_rng(0)
    z = feller_steps_exact(np.ones(200_000), 1.0, rng)
    p = math.exp(-1)
    assert abs(np.mean(z == 0) - p) <= 3 * math.sqrt(p * (1 - p) / z.size)


def test_exact_step_moments():
    # martingale with Var Z_r = 2 z r
    rng = np.random.default_rng(1)
    z0, dr = 0.7, 0.3
    z = feller_steps_exact(np.full(200_000, z0), dr, rng)
    assert abs(z.mean() - z0) <= 3 * z.std() / math.sqrt(z.size)
    assert z.var() == pytest.approx(2 * z0 * dr, rel=0.03)


def test_exact_step_laplace_transform():
    rng = np.random.default_rng(2)
    z = feller_steps_exact(np.full(100_000, 1.3), 0.5, rng)
    for theta in (0.5, 2.0, 10.0):
        e = np.exp(-theta * z)
        assert abs(e.mean() - laplace_transform(1.3, theta, 0.5)) <= 3 * e.std() / math.sqrt(e.size)


def test_scalar_and_vector_steps_agree_in_law():
    a = [feller_step_exact(1.0, 0.5, np.random.default_rng(3)) for _ in range(1)]
    assert a[0] >= 0
    rng = np.random.default_rng(4)
    s = np.array([feller_step_exact(1.0, 0.5, rng) for _ in range(20_000)])
    v = feller_steps_exact(np.ones(20_000), 0.5, rng)
    assert stats.ks_2samp(s, v).pvalue > 0.001


def test_composition_matches_single_step():
    # Markov property: two exact half steps have the law of one full step
    rng = np.random.default_rng(5)
    one = feller_steps_exact(np.ones(50_000), 1.0, rng)
    two = feller_steps_exact(feller_steps_exact(np.ones(50_000), 0.5, rng), 0.5, rng)
    assert stats.ks_2samp(one, two).pvalue > 0.001


def test_euler_step_underestimates_extinction():
    # one clipped Euler step of size 1 kills only when the Gaussian move exceeds the mass
    rng = np.random.default_rng(6)
    e = np.array([feller_step_euler(1.0, 1.0, rng) for _ in range(20_000)])
    assert np.mean(e == 0) < math.exp(-1) - 0.1


def test_survival_formula():
    assert survival_probability(1.0, 1.0) == pytest.approx(1 - math.exp(-1))
    assert extinction_probability(1.0, 1.0) == pytest.approx(math.exp(-1))
    assert survival_probability(0.0, 2.0) == 0.0
    with pytest.raises(ValueError):
        survival_probability(1.0, 0.0)
    with pytest.raises(ValueError):
        survival_probability(-1.0, 1.0)


@given(st.floats(0.0, 50.0), st.floats(1e-3, 50.0))
def test_survival_bounded_by_linear(z0, xi):
    p = survival_probability(z0, xi)
    assert 0.0 <= p <= 1.0
    assert p <= survival_bound(z0, xi) + 1e-15


def test_paths_absorb_at_zero():
    rng = np.random.default_rng(7)
    grid = np.linspace(0, 4, 41)
    paths = simulate_feller_paths(1.0, grid, 2000, rng)
    dead = paths == 0
    assert np.all(dead[:, :-1] <= dead[:, 1:])
    assert np.mean(dead[:, -1]) == pytest.approx(math.exp(-0.25), abs=3 * math.sqrt(0.25 / 2000))
    single = simulate_feller_path(1.0, grid, rng)
    assert single[0] == 1.0 and single.shape == grid.shape
    with pytest.raises(ValueError):
        simulate_feller_path(1.0, [0.5, 1.0], rng)


def test_feller_state_validation():
    assert FellerState(0.5).r == 0.0
    with pytest.raises(ValueError):
        FellerState(-1.0)
    with pytest.raises(ValueError):
        feller_step_exact(1.0, 0.0, np.random.default_rng(0))
