import math

import numpy as np
import pytest

from catalytic_sbm.catalyst import AtomicCatalyst, DensityCatalyst, sample_lattice_catalyst
from catalytic_sbm.feller import extinction_probability
from catalytic_sbm.particles import (
    PopulationExplosion,
    attach_r_grid,
    classify_good_bad,
    estimate_moments,
    evolve,
    exit_region,
    fixed_time,
    init_population,
    k_level,
    min_of,
    run_replicate,
    time_changed_mass,
    total_mass,
)

ONE = DensityCatalyst.constant(1.0)


def _finite_n_extinction(N, t, mass=1.0):
    # each particle line is critical binary branching at rate 2N: dies by t w.p. Nt / (1 + Nt)
    return (N * t / (1 + N * t)) ** round(mass * N)


def test_constant_density_extinction_exact_finite_n():
    rng = np.random.default_rng(0)
    N, n = 100, 3000
    dead = [run_replicate(i, ONE, {"mass": 1.0}, N, [1.0], rng, dt=0.1).total_mass[0] == 0 for i in range(n)]
    p = _finite_n_extinction(N, 1.0)
    assert abs(np.mean(dead) - p) <= 3 * math.sqrt(p * (1 - p) / n)
    assert p == pytest.approx(extinction_probability(1.0, 1.0), abs=0.01)


def test_mass_is_a_martingale_with_linear_variance():
    rng = np.random.default_rng(1)
    m = np.array([run_replicate(i, ONE, {"mass": 1.0}, 100, [0.5], rng, dt=0.05).total_mass[0]
                  for i in range(3000)])
    est = estimate_moments(m)
    assert abs(est.mean - 1.0) <= 3 * est.mean_se
    assert abs(est.variance - 2 * 0.5) <= 3 * est.variance_se


def test_initial_rounding():
    rng = np.random.default_rng(2)
    assert init_population({"mass": 0.1}, 500, rng).count == 50
    counts = [init_population({"mass": 0.1234}, 100, rng).count for _ in range(4000)]
    assert set(counts) <= {12, 13}
    assert abs(np.mean(counts) - 12.34) <= 3 * math.sqrt(0.34 * 0.66 / 4000)
    pts = init_population({"mass": 1.0, "kind": "uniform", "low": -1, "high": 1}, 1000, rng).positions
    assert pts.min() >= -1 and pts.max() <= 1
    with pytest.raises(ValueError):
        init_population({"mass": 0.0}, 10, rng)


def test_determinism():
    cat = DensityCatalyst.parabolic(2.0)
    a = run_replicate(0, cat, {"mass": 1.0, "at": 0.5}, 200, [0.5, 1.0], np.random.default_rng(3), dt=0.01,
                      keep_final=True)
    b = run_replicate(0, cat, {"mass": 1.0, "at": 0.5}, 200, [0.5, 1.0], np.random.default_rng(3), dt=0.01,
                      keep_final=True)
    assert np.array_equal(a.total_mass, b.total_mass)
    assert np.array_equal(a.final.positions, b.final.positions)


def test_zero_catalyst_moves_without_branching():
    rng = np.random.default_rng(4)
    pop = init_population({"mass": 1.0}, 2000, rng)
    evolve(pop, DensityCatalyst.constant(0.0), fixed_time(1.0), 1.0, rng, dt=0.01)
    assert pop.count == 2000 and np.all(pop.clocks == 0)
    x = pop.positions
    assert abs(x.var() - 1.0) <= 3 * math.sqrt(2 / x.size)


def test_exit_region_freezes_on_the_boundary():
    rng = np.random.default_rng(5)
    pop = init_population({"mass": 1.0}, 500, rng)
    evolve(pop, DensityCatalyst.constant(0.0), exit_region((-0.5, 0.5)), 20.0, rng, dt=1e-3)
    assert pop.n_alive == 0 and pop.n_frozen == 500
    # frozen at the end of the step that crossed, so within a few sqrt(dt) of the boundary
    assert np.all(np.abs(np.abs(pop.positions) - 0.5) < 0.2)


def test_k_level_caps_the_clock():
    rng = np.random.default_rng(6)
    pop = init_population({"mass": 1.0}, 200, rng)
    evolve(pop, ONE, min_of(k_level(0.3), fixed_time(5.0)), 5.0, rng, dt=0.01)
    assert pop.n_alive == 0
    assert np.all(pop.clocks <= 0.3 + 1e-12)
    good, bad = classify_good_bad(pop, 0.3 - 1e-9)
    assert good == pytest.approx(total_mass(pop)) and bad == 0


def test_time_changed_mass_is_feller():
    # with density 1 the clock equals time, and Z_r has the Feller law
    rng = np.random.default_rng(7)
    r_grid = np.array([0.25, 0.5, 1.0])
    z = []
    for i in range(2000):
        pop = attach_r_grid(init_population({"mass": 1.0}, 100, rng), r_grid)
        evolve(pop, ONE, k_level(1.0), 10.0, rng, dt=0.05)
        z.append(time_changed_mass(pop))
    z = np.array(z)
    assert np.all(np.abs(z.mean(axis=0) - 1) <= 3 * z.std(axis=0) / math.sqrt(len(z)))
    p = _finite_n_extinction(100, 1.0)
    assert abs(np.mean(z[:, -1] == 0) - p) <= 3 * math.sqrt(p * (1 - p) / len(z))


def test_time_changed_mass_needs_finished_lineages():
    rng = np.random.default_rng(8)
    pop = attach_r_grid(init_population({"mass": 1.0}, 50, rng), [1.0])
    evolve(pop, ONE, fixed_time(0.1), 0.1, rng, dt=0.05)
    pop.unfreeze()
    with pytest.raises(ValueError):
        time_changed_mass(pop)


def test_genealogy_records_births():
    rng = np.random.default_rng(9)
    pop = init_population({"mass": 1.0}, 50, rng, genealogy_cap=100_000)
    evolve(pop, ONE, fixed_time(0.5), 0.5, rng, dt=0.05)
    g = pop.genealogy_table()
    assert g.shape[1] == 3 and np.all(g[:, 0] >= 50) and np.all(g[:, 2] <= 0.5)
    assert np.all(g[:, 1] < g[:, 0])


def test_step_cap_raises():
    rng = np.random.default_rng(10)
    pop = init_population({"mass": 1.0}, 100, rng)
    with pytest.raises(PopulationExplosion):
        evolve(pop, ONE, fixed_time(10.0), 10.0, rng, dt=1e-3, step_cap=1000)


def test_atomic_catalyst_branches_near_atoms_only():
    rng = np.random.default_rng(11)
    cat = AtomicCatalyst([3.0], [1.0], (-5, 5))
    pop = init_population({"mass": 1.0}, 300, rng)
    evolve(pop, cat, fixed_time(0.05), 0.05, rng, dt=1e-3, eps=0.1)
    # particles started at 0 cannot see an atom at distance 3 in time 0.05
    assert pop.count == 300 and np.all(pop.clocks == 0)


def test_lattice_population():
    rng = np.random.default_rng(12)
    cat = sample_lattice_catalyst(1, 2, rng)
    tr = run_replicate(0, cat, {"mass": 1.0, "at": [0]}, 50, [0.5, 1.0], rng, lattice=True, dim=1,
                       keep_final=True)
    assert tr.final.lattice and tr.final.positions.shape[1] == 1
    with pytest.raises(ValueError):
        evolve(init_population({"mass": 1.0}, 5, rng), cat, fixed_time(1.0), 1.0, rng)
    m = [run_replicate(i, cat, {"mass": 1.0, "at": [0]}, 50, [1.0], rng, lattice=True).total_mass[0]
         for i in range(2000)]
    assert abs(np.mean(m) - 1.0) <= 3 * np.std(m) / math.sqrt(2000)


def test_estimate_moments_jackknife():
    v = np.random.default_rng(13).normal(2.0, 3.0, 5000)
    est = estimate_moments(v)
    assert est.mean_se == pytest.approx(v.std(ddof=1) / math.sqrt(v.size), rel=1e-9)
    assert est.variance == pytest.approx(v.var(ddof=1))
    # for a normal sample Var(s^2) is about 2 sigma^4 / n
    assert est.variance_se == pytest.approx(math.sqrt(2 * 81 / 5000), rel=0.1)
    with pytest.raises(ValueError):
        estimate_moments([1.0])
