import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from catalytic_sbm.catalyst import AtomicCatalyst, DensityCatalyst, LatticeCatalyst, quantize_and_truncate
from catalytic_sbm.clt import CumulativeFunctional, clt, clt_atomic, clt_density, clt_lattice, inverse_time_change
from catalytic_sbm.motion import JumpPath, Path, brownian_path, local_time


def test_constant_density_is_linear():
    p = brownian_path(0.0, 0.5, 2.5, 1e-2, np.random.default_rng(0))
    K = clt_density(p, DensityCatalyst.constant(0.7))
    assert np.allclose(K.values, 0.7 * (K.times - 0.5))


def test_resting_on_an_atom():
    # a path sitting at an atom of weight w sees density w / 2eps
    p = Path(0.0, 0.1, np.full(11, 0.3))
    cat = AtomicCatalyst([0.3], [2.0], (0, 1))
    K = clt_atomic(p, cat, 0.05)
    assert K.final == pytest.approx(2.0 / 0.1 * 1.0)


def test_atomic_rate_is_weighted_local_time():
    rng = np.random.default_rng(1)
    p = brownian_path(0.0, 0.0, 1.0, 1e-4, rng)
    cat = AtomicCatalyst([-0.2, 0.1, 0.35], [0.5, 1.0, 0.25], (-1, 1))
    eps = 0.02
    expected = sum(w * local_time(p, b, eps) for b, w in zip(cat.locations, cat.weights))
    # trapezoid vs left-point occupation differ by O(dt / eps) per crossing
    assert clt_atomic(p, cat, eps).final == pytest.approx(expected, rel=0.02, abs=1e-3)


def test_layered_matches_flattened():
    p = brownian_path(0.0, 0.0, 1.0, 1e-3, np.random.default_rng(2))
    cat = AtomicCatalyst([-0.3, 0.1, 0.4], [0.3, 0.6, 0.2], (-1, 1))
    lay = quantize_and_truncate(cat, 1)
    assert clt(p, lay, 0.05).final == pytest.approx(clt(p, lay.flatten(), 0.05).final)


def test_gap_density_mean():
    # E int_0^4 1{|W| >= 1} ds = 4 - int_0^4 erf(1/sqrt(2s)) ds
    inside, _ = integrate.quad(lambda s: special.erf(1 / math.sqrt(2 * s)), 0, 4)
    rng = np.random.default_rng(3)
    cat = DensityCatalyst.with_gap(-1, 1, 1.0)
    k = np.array([clt(brownian_path(0.0, 0.0, 4.0, 1e-3, rng), cat).final for _ in range(3000)])
    assert abs(k.mean() - (4 - inside)) <= 3 * k.std() / math.sqrt(k.size) + 0.01


def test_lattice_holding_times():
    cat = LatticeCatalyst(1, 0, np.array([0.2, 0.5, 0.8]))
    jp = JumpPath(0.0, 3.0, [[0], [1], [2]], [1.0, 1.5])
    K = clt_lattice(jp, cat)
    # site 2 lies outside the cube of radius 1 and takes the default 1
    assert K.times.tolist() == [0.0, 1.0, 1.5, 3.0]
    assert K.values.tolist() == pytest.approx([0.0, 0.5, 0.5 + 0.8 * 0.5, 0.9 + 1.5])


def test_dispatch_needs_eps_for_atoms():
    p = Path(0.0, 0.1, [0.0, 0.1])
    with pytest.raises(ValueError):
        clt(p, AtomicCatalyst([0.5], [1.0], (0, 1)))
    with pytest.raises(ValueError):
        clt_atomic(p, AtomicCatalyst([0.5], [1.0], (0, 1)), 0.0)


def test_functional_validation_and_sum():
    with pytest.raises(ValueError):
        CumulativeFunctional([0, 1], [0.5, 1.0])
    with pytest.raises(ValueError):
        CumulativeFunctional([0, 1], [0.0, -1.0])
    a = CumulativeFunctional([0, 1, 2], [0, 1, 1])
    b = CumulativeFunctional([0, 1, 2], [0, 0, 2])
    assert (a + b).values.tolist() == [0, 1, 3]
    with pytest.raises(ValueError):
        a + CumulativeFunctional([0, 2], [0, 1])
    buf = io.StringIO()
    a.to_csv(buf)
    assert buf.getvalue().splitlines()[:2] == ["t,K", "0.0,0.0"]


def test_inverse_time_change_examples():
    K = CumulativeFunctional([0.0, 1.0, 2.0, 3.0], [0.0, 1.0, 1.0, 3.0])
    assert inverse_time_change(K, 0.0) == 0.0
    assert inverse_time_change(K, 0.5) == 0.5
    # flat stretch: the first time the level is reached
    assert inverse_time_change(K, 1.0) == 1.0
    assert inverse_time_change(K, 2.0) == 2.5
    assert inverse_time_change(K, 3.5) is None
    with pytest.raises(ValueError):
        inverse_time_change(K, -1.0)


@settings(deadline=None, max_examples=50)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_inverse_is_right_inverse(seed, frac):
    p = brownian_path(0.0, 0.0, 1.0, 1e-2, np.random.default_rng(seed))
    K = clt(p, DensityCatalyst.parabolic(2.0))
    r = frac * K.final
    t = inverse_time_change(K, r)
    assert K(t) == pytest.approx(r, abs=1e-12)
    # no earlier time reaches r
    assert np.all(K.values[K.times < t - 1e-12] < r + 1e-12)
