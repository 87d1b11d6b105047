import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from debye_bie import rootfinder as rf
from debye_bie.sphere_ops import multiplier_normal
from debye_bie.specfun import hankel_poly

import oracles


def test_count_linear():
    f = lambda z: z - (1 - 1j)
    assert rf.count_zeros(f, rf.SearchRegion(0, 2, -2, 0), lambda z: np.ones_like(z)) == 1


def test_count_quadratic_with_numerical_derivative():
    z0, z1 = 0.3 + 0.2j, -0.7 - 0.4j
    f = lambda z: (z - z0) * (z - z1)
    assert rf.count_zeros(f, rf.SearchRegion(-2, 2, -2, 2, puncture=0.01)) == 2


def test_no_zero_of_mn_upper_half():
    f, df = rf.mn_function(1)
    assert rf.count_zeros(f, rf.SearchRegion(0, 3, 0, 3), df) == 0


def test_polynomial_roots_recovered():
    ref = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j])
    f = lambda z: np.prod([z - r for r in ref], axis=0)
    roots = rf.find_roots(f, rf.SearchRegion(-3, 3, -3, 3))
    assert len(roots) == 4
    for r in ref:
        assert min(abs(np.array(roots) - r)) < 1e-10


def test_contour_error_when_function_vanishes_identically():
    with pytest.raises(rf.ContourTooCloseError):
        rf.count_zeros(lambda z: np.zeros_like(z), rf.SearchRegion(1, 2, 1, 2))


def test_region_validation():
    with pytest.raises(ValueError):
        rf.SearchRegion(1, 0, 0, 1)


def test_found_roots_have_small_residual_and_reflect():
    l = 4
    f, df = rf.mn_function(l)
    roots = rf.find_roots(f, rf.SearchRegion(-10, 10, -6, 0.5), df)
    assert len(roots) == rf.count_zeros(f, rf.SearchRegion(-10, 10, -6, 0.5), df)
    assert roots
    arr = np.array(roots)
    for r in roots:
        assert r.imag < 0
        fr, dfr = f(np.array([r])), df(np.array([r]))
        assert abs(fr[0]) < 1e-10 * max(1.0, abs(dfr[0]))
        assert min(abs(arr - (-np.conj(r)))) < 1e-8


def test_count_matches_find_on_random_regions():
    f, df = rf.mn_function(3)
    rng = np.random.default_rng(11)
    for _ in range(20):
        x0, y0 = rng.uniform(-12, 10), rng.uniform(-6, 0)
        reg = rf.SearchRegion(x0, x0 + rng.uniform(0.5, 4), y0, y0 + rng.uniform(0.5, 3))
        assert len(rf.find_roots(f, reg, df)) == rf.count_zeros(f, reg, df)


@pytest.mark.parametrize("l", [1, 5, 7, 10, 25])
def test_no_roots_closed_upper_half(l):
    reg = rf.SearchRegion(0.05, 30, 0, 5)
    f, df = rf.mn_function(l)
    assert rf.count_zeros(f, reg, df) == 0
    g, dg = rf.mt_function(l)
    assert rf.count_zeros(g, reg, dg) == 0


def test_hankel_polynomial_roots():
    for l in range(1, 12):
        r = rf.hankel_poly_roots(l)
        assert np.all(r.imag < 0)
        on_axis = np.sum(np.abs(r.real) < 1e-9)
        assert on_axis == (l % 2)
        np.testing.assert_allclose(hankel_poly(l)(r), 0, atol=1e-9 * np.abs(hankel_poly(l).coef).max())


def test_first_root_l1_against_closed_form():
    # zeros of (i + k) j_1 + i k j_1' with elementary j_1, polished by Newton
    z = rf.first_roots_mn(1, 1, exclude_hankel_zeros=True)[0]
    q = lambda k: (1j + k) * oracles.j1_closed(k) + 1j * k * oracles.j1_prime_closed(k)
    w = z
    for _ in range(20):
        d = (q(w + 1e-7) - q(w - 1e-7)) / 2e-7
        w = w - q(w) / d
    assert abs(w - z) < 1e-9
    assert abs(z - (4.1830 - 1.9193j)) < 1e-3


def test_first_roots_l1_log_trend():
    roots = rf.first_roots_mn(1, 50)
    assert len(roots) == 50
    assert all(z.imag < 0 for z in roots)
    assert abs(rf.log_trend_correlation(roots)) > 0.9
    for z in roots[:10]:
        assert abs(multiplier_normal(z, 1)) < 1e-9 * max(1.0, abs(np.exp(-2j * z)) ** -1)


def test_smallest_roots_literal():
    roots = [rf.smallest_root_positive_re(l) for l in range(1, 51)]
    for l, z in enumerate(roots, start=1):
        assert z.real > 0 and z.imag < 0
        assert abs(multiplier_normal(z, l)) < 1e-9
    re = np.array([z.real for z in roots])
    # from l = 2 on the smallest zero is a Hankel-polynomial zero, and those
    # alternate between even and odd degree
    assert np.all(np.abs(re[1::2] - 0.87) < 0.01)
    assert np.all(np.abs(re[2::2] - 1.75) < 0.03)


def test_smallest_roots_of_bessel_factor_increase():
    roots = [rf.smallest_root_positive_re(l, exclude_hankel_zeros=True) for l in range(1, 51)]
    re = np.array([z.real for z in roots])
    assert np.all(np.diff(re) >= 0)
    for l, z in enumerate(roots, start=1):
        assert z.imag < 0
        assert abs(multiplier_normal(z, l)) < 1e-9 * max(1.0, np.exp(2 * abs(z.imag)))


@pytest.mark.slow
def test_smallest_root_degree_1000():
    z = rf.smallest_root_positive_re(1000)
    assert z.real > 0 and z.imag < 0
    assert abs(multiplier_normal(z, 1000)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(-20, 20), st.floats(-4, 4), st.integers(1, 30))
def test_reflection_property(x, y, l):
    k = complex(x, y)
    if abs(k) < 1e-3:
        return
    a = multiplier_normal(-np.conj(k), l)
    b = np.conj(multiplier_normal(k, l))
    assert abs(a - b) <= 1e-11 * max(1.0, abs(b))
