import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catalytic_sbm.catalyst import (
    AtomicCatalyst,
    DensityCatalyst,
    LatticeCatalyst,
    LayeredCatalyst,
    UnboundedGapError,
    cluster_event,
    count_lattice_animals,
    dumps,
    loads,
    low_cluster_sizes,
    max_gap,
    periodic_extension,
    quantize_and_truncate,
    sample_lattice_catalyst,
    sample_stable_catalyst,
    sample_stable_masses,
    stable_constant,
)


def test_stable_constant_half_closed_form():
    assert stable_constant(0.5) == pytest.approx((1 - 2**-0.5) / math.sqrt(math.pi), rel=1e-10)
    assert stable_constant(0.5) == pytest.approx(0.16525, abs=1e-5)


@pytest.mark.parametrize("gamma", [0.3, 0.5, 0.8])
def test_stable_constant_matches_gamma_function(gamma):
    # int_0^inf r^{-1-g}(1-e^{-r}) dr = Gamma(1-g)/g
    expected = (1 - 2 ** (-gamma)) / gamma * gamma / math.gamma(1 - gamma)
    assert stable_constant(gamma) == pytest.approx(expected, rel=1e-9)


def test_stable_rejects_bad_gamma():
    for g in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            sample_stable_catalyst(g, (0, 1), rng=np.random.default_rng(0))


def test_stable_empty_window():
    cat = sample_stable_catalyst(0.5, (0.0, 0.0), rng=np.random.default_rng(0))
    assert cat.n_atoms == 0


def test_stable_laplace_functional_half():
    rng = np.random.default_rng(1)
    m = sample_stable_masses(0.5, 1.0, 100_000, weight_floor=1e-8, rng=rng)
    e = np.exp(-m)
    se = e.std(ddof=1) / math.sqrt(e.size)
    assert abs(e.mean() - math.exp(-1.0)) <= 3 * se


def test_stable_masses_match_catalyst_sampler():
    # same construction with and without locations: compare means of e^{-mass}
    rng = np.random.default_rng(2)
    a = np.exp(-sample_stable_masses(0.5, 1.0, 4000, weight_floor=1e-6, rng=rng))
    b = np.exp(-np.array([sample_stable_catalyst(0.5, (0, 1), 1e-6, rng=rng).total_mass() for _ in range(4000)]))
    se = math.hypot(a.std() / math.sqrt(a.size), b.std() / math.sqrt(b.size))
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_stable_layer_counts():
    rng = np.random.default_rng(3)
    gamma, n = 0.5, 6
    counts = []
    for _ in range(2000):
        cat = sample_stable_catalyst(gamma, (0, 1), 1e-3, rng=rng)
        w = cat.weights
        counts.append(np.count_nonzero((w >= 2.0**-n) & (w < 2.0 ** (-n + 1))))
    counts = np.array(counts)
    mu = stable_constant(gamma) * 2 ** (gamma * n)
    assert abs(counts.mean() - mu) <= 3 * math.sqrt(mu / counts.size)


def test_compensation_adds_missing_mean():
    rng = np.random.default_rng(4)
    cat = sample_stable_catalyst(0.5, (0, 1), 1e-3, rng=rng, compensate=True)
    assert cat.diffuse_density > 0
    assert cat.total_mass() == pytest.approx(cat.weights.sum() + cat.diffuse_density)


def test_quantize_examples():
    cat = AtomicCatalyst([0.1, 0.2, 0.3, 0.4], [0.3, 0.9, 2.0**-3, 1.0], (0, 1))
    lay = quantize_and_truncate(cat, 1)
    assert lay.layer(2).tolist() == [0.1]
    assert lay.layer(3).tolist() == [0.3]
    # the removal threshold for N=1 is 2^0 = 1: weight 0.9 stays in band 1, weight 1 is removed
    assert lay.layer(1).tolist() == [0.2]
    assert lay.total_mass() == 0.5 + 0.25 + 0.125
    assert all(n >= 1 for n in lay.layers)


@settings(deadline=None)
@given(st.lists(st.floats(1e-6, 4.0), min_size=1, max_size=30), st.integers(0, 6))
def test_quantize_band_property(weights, N):
    locs = np.linspace(0.01, 0.99, len(weights))
    cat = AtomicCatalyst(locs, weights, (0, 1))
    lay = quantize_and_truncate(cat, N)
    lookup = dict(zip(locs, weights))
    kept = 0
    for n, pts in lay.layers.items():
        out = 2.0**-n
        for b in pts:
            w = lookup[b]
            assert out <= w < 2 * out
            assert w < 2.0 ** (-N + 1)
            kept += 1
    assert kept == sum(w < 2.0 ** (-N + 1) for w in weights)


def test_periodic_extension():
    cat = AtomicCatalyst([0.5, 1.5], [1.0, 2.0], (-2, 2))
    per = periodic_extension(cat, 1.0)
    assert per.period == 2.0
    locs, w = per.atoms_in(-3, 5)
    assert np.allclose(locs, [-1.5, 0.5, 2.5, 4.5])
    assert per.mass_in(-1, 1) == cat.mass_in(-1, 1) == 1.0
    assert periodic_extension(AtomicCatalyst([], [], (-1, 1)), 1.0).n_atoms == 0
    with pytest.raises(ValueError):
        periodic_extension(cat, 0.0)


@given(st.floats(-50, 50))
def test_periodic_translation_invariance(x):
    per = periodic_extension(AtomicCatalyst([0.2, 0.7], [1.0, 0.5], (-1, 1)), 1.0)
    c = per.cumulative()
    assert c.smoothed_density(x, 0.3) == pytest.approx(c.smoothed_density(x + 2.0, 0.3), abs=1e-12)


def test_max_gap_examples():
    assert max_gap([0.1, 0.4, 0.9], (0, 1)) == pytest.approx(0.5)
    assert max_gap([0.1, 0.4, 0.9], (0, 1), period=1.0) == pytest.approx(0.5)
    assert max_gap([0.5], (0, 1), period=1.0) == 1.0
    with pytest.raises(UnboundedGapError):
        max_gap([], (0, 1))


def test_lattice_sampling():
    rng = np.random.default_rng(5)
    cat = sample_lattice_catalyst(1, 1, rng)
    assert cat.n_sites == 5 and np.all((cat.values > 0) & (cat.values < 1))
    assert cat.outside_default == 1.0
    assert cat.value_at((10,)) == 1.0
    vals = np.concatenate([sample_lattice_catalyst(1, 10, rng).values for _ in range(50)])
    assert abs(vals.mean() - 0.5) <= 3 * math.sqrt(1 / 12 / vals.size)
    with pytest.raises(MemoryError):
        sample_lattice_catalyst(3, 10, rng)


def test_cluster_event_m1_is_min_scan():
    rng = np.random.default_rng(6)
    for _ in range(200):
        cat = sample_lattice_catalyst(2, 1, rng)
        zeta = rng.random()
        assert cluster_event(cat, 1, zeta) == (cat.values.min() > zeta)


def test_cluster_event_small_zeta():
    rng = np.random.default_rng(7)
    assert all(cluster_event(sample_lattice_catalyst(1, 2, rng), 2, 1e-9) for _ in range(100))


def test_cluster_event_pair_inclusion_exclusion():
    # oracle: P(some adjacent pair on 5 sites both <= 1/2), enumerated exactly over low/high patterns
    p_exact = sum(
        0.5**5
        for bits in itertools.product([0, 1], repeat=5)
        if any(bits[i] and bits[i + 1] for i in range(4))
    )
    assert p_exact == pytest.approx(19 / 32)
    rng = np.random.default_rng(8)
    n = 200_000
    vals = rng.random((n, 5))
    fails = sum(not cluster_event(LatticeCatalyst(1, 1, v), 2, 0.5) for v in vals[:20_000])
    f = fails / 20_000
    assert abs(f - p_exact) <= 3 * math.sqrt(p_exact * (1 - p_exact) / 20_000)
    # vectorized count over the full sample with the same rule
    low = vals <= 0.5
    f_all = np.mean(np.any(low[:, :-1] & low[:, 1:], axis=1))
    assert abs(f_all - p_exact) <= 3 * math.sqrt(p_exact * (1 - p_exact) / n)


def test_low_cluster_sizes():
    cat = LatticeCatalyst(1, 1, np.array([0.1, 0.2, 0.9, 0.1, 0.8]))
    assert sorted(low_cluster_sizes(cat, 0.5).tolist()) == [1, 2]


@pytest.mark.parametrize("m,d,expected", [(1, 1, 1), (2, 1, 2), (3, 1, 3), (4, 1, 4), (1, 2, 1), (2, 2, 4),
                                          (3, 2, 18), (4, 2, 76)])
def test_lattice_animals(m, d, expected):
    # rooted polyomino counts: m * (fixed polyominoes of size m) = 1, 4, 18, 76 in d=2
    assert count_lattice_animals(m, d) == expected


def test_density_kinds():
    par = DensityCatalyst.parabolic(2.0)
    assert par(0.5) == 0.25 and par(3.0) == 1.0 and par(0.0) == 0.0
    gap = DensityCatalyst.with_gap(-1, 1, 2.0)
    assert gap(0.0) == 0.0 and gap(1.0) == 2.0
    assert DensityCatalyst.constant(0.7)(5.0) == 0.7
    with pytest.raises(ValueError):
        DensityCatalyst("wavy")


def test_atomic_invariants():
    with pytest.raises(ValueError):
        AtomicCatalyst([0.5], [0.0], (0, 1))
    with pytest.raises(ValueError):
        AtomicCatalyst([1.5], [1.0], (0, 1))
    cat = AtomicCatalyst([0.7, 0.2], [1.0, 2.0], (0, 1))
    assert cat.locations.tolist() == [0.2, 0.7]


@pytest.mark.parametrize("hex_floats", [False, True])
def test_json_round_trip(hex_floats):
    rng = np.random.default_rng(9)
    cats = [
        sample_stable_catalyst(0.5, (-1, 1), 1e-3, rng=rng, compensate=True),
        periodic_extension(sample_stable_catalyst(0.5, (-1, 1), 1e-3, rng=rng), 1.0),
        quantize_and_truncate(sample_stable_catalyst(0.5, (-1, 1), 1e-3, rng=rng), 2),
        DensityCatalyst.with_gap(-2, 2, 0.5),
        sample_lattice_catalyst(2, 1, rng),
    ]
    for cat in cats:
        back = loads(dumps(cat, hex_floats=hex_floats))
        assert type(back) is type(cat)
        if isinstance(cat, AtomicCatalyst):
            assert np.array_equal(back.locations, cat.locations) and np.array_equal(back.weights, cat.weights)
            assert back.period == cat.period and back.diffuse_density == cat.diffuse_density
        elif isinstance(cat, LayeredCatalyst):
            assert cat.layers.keys() == back.layers.keys()
            assert all(np.array_equal(cat.layers[n], back.layers[n]) for n in cat.layers)
        elif isinstance(cat, LatticeCatalyst):
            assert np.array_equal(back.values, cat.values)
        else:
            assert back == cat


def test_stable_determinism():
    a = sample_stable_catalyst(0.5, (0, 1), 1e-4, rng=np.random.default_rng(11))
    b = sample_stable_catalyst(0.5, (0, 1), 1e-4, rng=np.random.default_rng(11))
    assert np.array_equal(a.locations, b.locations) and np.array_equal(a.weights, b.weights)
