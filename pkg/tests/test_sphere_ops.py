import math

import numpy as np
import pytest

from debye_bie import sphere_ops as so
from debye_bie.specfun import (VSHKind, sph_bessel_j, sph_hankel_h1, sph_bessel_derivs, sph_harm_Y,
                               vec_sph_harm, lm_index)
from debye_bie.sphere_ops import SphHarmCoeffs

import oracles


def random_dirs(n, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1)[:, None]


def angles(x):
    r = np.linalg.norm(x, axis=-1)
    return np.arccos(x[..., 2] / r), np.arctan2(x[..., 1], x[..., 0])


# -- multipliers -------------------------------------------------------------


def test_mn_matches_closed_form_l1():
    for k in (0.3, 1.0, 2.5 + 0.4j, 7.0):
        h = -np.exp(1j * k) * (k + 1j) / k**2
        j, jp = oracles.j1_closed(k), oracles.j1_prime_closed(k)
        ref = k * h * ((1j + k) * j + 1j * k * jp)
        assert abs(so.multiplier_normal(k, 1) - ref) < 1e-13 * abs(ref)


def test_mn_definition_general_l():
    for l in (2, 6, 15):
        for k in (0.5, 3.0 + 1.0j, 12.0):
            j, h = sph_bessel_j(l, k), sph_hankel_h1(l, k)
            jp, _ = sph_bessel_derivs(l, k)
            ref = k * h * ((1j + k) * j + 1j * k * jp)
            assert abs(so.multiplier_normal(k, l) - ref) < 1e-12 * max(1, abs(ref))


@pytest.mark.parametrize("l", [1, 2, 10, 100])
def test_mn_static_limit_is_continuous(l):
    m0 = so.multiplier_normal(0.0, l)
    assert abs(m0 - (l + 1) / (2 * l + 1)) < 1e-15
    assert abs(so.multiplier_normal(1e-8, l) - m0) < 1e-7


def test_mn_reflection_symmetry():
    rng = np.random.default_rng(7)
    k = rng.uniform(0.05, 20, 100) + 1j * rng.uniform(-3, 3, 100)
    for l in (1, 4, 9):
        np.testing.assert_allclose(so.multiplier_normal(-np.conj(k), l), np.conj(so.multiplier_normal(k, l)),
                                   rtol=1e-11)
    assert abs(so.multiplier_normal(2 + 0.5j, 4) - np.conj(so.multiplier_normal(-2 + 0.5j, 4))) < 1e-13


@pytest.mark.parametrize("k", [1.0, 10.0])
def test_mn_large_degree_expansion(k):
    # m_n(k, l) = (l + 1 - i k)/(2l + 1) + O(l^-3)
    l = np.arange(50, 401)
    m = so.multiplier_normal(k, l)
    rem = np.abs(m - (l + 1 - 1j * k) / (2 * l + 1)) * l**2
    assert rem.max() < 10 * k**2 / 50 * 1.1
    assert np.all(np.diff(rem) < 0)


def test_mn_derivative_consistent():
    l = 3
    k = np.array([1.0 + 0.2j, 4.0 - 1.0j])
    m, dm = so.multiplier_normal_with_derivative(k, l)
    h = 1e-5
    fd = (so.multiplier_normal(k + h, l) - so.multiplier_normal(k - h, l)) / (2 * h)
    np.testing.assert_allclose(dm, fd, rtol=1e-8)
    np.testing.assert_allclose(m, so.multiplier_normal(k, l), rtol=1e-13)


def test_mt_leading_behaviour():
    assert abs(so.multiplier_tangential(1.0, 400) + 0.25) < 0.02 * 0.25
    assert abs(so.multiplier_tangential(1e-9, 3) - so.multiplier_tangential(0.0, 3)) < 1e-8


def test_mt_clusters_at_minus_quarter():
    l = np.array([100, 200, 400, 800])
    for k in (1.0, 5.0):
        d = np.abs(so.multiplier_tangential(k, l) + 0.25)
        assert np.all(np.diff(d) < 0) and d[-1] < 1e-2 * k


def test_hybrid_condition_grows_but_stays_moderate():
    # diagonal system: condition = max |m_t| / min |m_t| over degrees up to 2k + 20
    conds = []
    for k in (1.0, 5.0, 10.0, 20.0):
        a = np.abs(so.multiplier_tangential(k, np.arange(1, int(2 * k + 20) + 1)))
        conds.append(a.max() / a.min())
    assert np.all(np.diff(conds) > 0)
    assert max(conds) < 1e4


def test_mt_l1_against_nystrom(sphere16):
    # eigenvalue of G0 div[n x (n x E_+)] on an r-only Y_1^0 density
    from debye_bie.solver import BoundarySystem

    sysB = BoundarySystem(sphere16, 1.0)
    th, ph = sphere16.uv.T
    Y = sph_harm_Y(1, 0, th, ph)
    x = np.stack([Y, np.zeros_like(Y)], axis=1)
    out = sysB.Q("+").apply(x)
    lam = np.sum(sphere16.weights * np.conj(Y) * out[:, 0])
    assert abs(lam - so.multiplier_tangential(1.0, 1)) < 1e-10


def test_mt_roots_lower_half_plane():
    from debye_bie.rootfinder import SearchRegion, find_roots, mt_function

    f, df = mt_function(10)
    roots = find_roots(f, SearchRegion(0.1, 12.0, -2.0, 0.05), df)
    assert all(z.imag < 0 for z in roots)


# -- solves --------------------------------------------------------------------


def test_normal_solve_zero_and_impulse():
    z = SphHarmCoeffs.zeros(6)
    sol = so.solve_normal_sphere(1.0, z, z)
    assert sol.a.norm() == 0 and sol.b.norm() == 0
    c = SphHarmCoeffs.impulse(6, 1, 0)
    sol = so.solve_normal_sphere(1.0, c, z)
    expect = np.zeros_like(c.data)
    expect[lm_index(1, 0)] = 1 / so.multiplier_normal(1.0, 1)
    np.testing.assert_allclose(sol.a.data, expect, atol=1e-15)
    assert sol.b.norm() == 0


def test_normal_solve_round_trip(rng):
    c = SphHarmCoeffs.random(12, rng)
    d = SphHarmCoeffs.random(12, rng)
    for k in (0.3, 2.0, 7.5 + 0.5j):
        tr = so.eval_traces_sphere(so.solve_normal_sphere(k, c, d))
        assert np.abs(tr.c.data - c.data).max() < 1e-12 * np.abs(c.data).max()
        assert np.abs(tr.d.data - d.data).max() < 1e-12 * np.abs(d.data).max()


def test_solve_rejects_nonzero_mean():
    c = SphHarmCoeffs.impulse(4, 0, 0)
    with pytest.raises(ValueError):
        so.solve_normal_sphere(1.0, c, SphHarmCoeffs.zeros(4))


def test_singular_multiplier_error():
    from debye_bie.rootfinder import first_roots_mn

    z0 = first_roots_mn(1, 1)[0]
    c = SphHarmCoeffs.impulse(2, 1, 0)
    with pytest.raises(so.SingularMultiplierError, match="l=1"):
        so.solve_normal_sphere(z0, c, SphHarmCoeffs.zeros(2))


def test_diagonality(rng):
    for l, m in [(1, 0), (3, -2), (8, 8)]:
        e = SphHarmCoeffs.impulse(10, l, m, 0.7 - 0.2j)
        z = SphHarmCoeffs.zeros(10)
        for sol in (so.solve_normal_sphere(1.3, e, e), so.solve_hybrid_sphere(1.3, e, e)):
            for tab in (sol.a, sol.b):
                nz = np.flatnonzero(tab.data)
                assert list(nz) == [lm_index(l, m)]
        assert so.solve_hybrid_sphere(1.3, z, z).a.norm() == 0


def test_hybrid_single_mode_boundary_conditions():
    k, lmax = 1.7, 6
    p = SphHarmCoeffs.impulse(lmax, 2, 1)
    sol = so.solve_hybrid_sphere(k, p, SphHarmCoeffs.zeros(lmax))
    x = random_dirs(64, seed=1)
    E, H = so.eval_field_sphere(sol, x, on_surface=True)
    th, ph = angles(x)
    er, et, ep = so.sphere_frame(th, ph)
    g = vec_sph_harm(2, 1, VSHKind.GRAD, th, ph, normalized=True)
    Et_in = g[:, :1] * et + g[:, 1:] * ep
    # grad-type incident tangential data carries no normal H
    Et_tot = E - (E * er).sum(-1)[:, None] * er + Et_in
    assert np.abs(np.cross(er, Et_tot)).max() < 1e-10
    assert np.abs((H * er).sum(-1)).max() < 1e-10


@pytest.mark.parametrize("k", [0.1, 1.0, 5.0])
def test_hybrid_plane_wave_pec(k):
    Ein, Hin = so.plane_wave(k, (0.2, -0.4, 1.0), (1.0, 0.3j, 0.0))
    p, q = so.project_tangential(Ein, 30)
    sol = so.solve_hybrid_sphere(k, p, q)
    assert sol.a.data[0] == 0 and sol.b.data[0] == 0
    x = random_dirs(64, seed=2)
    E, H = so.eval_field_sphere(sol, x, on_surface=True)
    nxE = np.cross(x, E + Ein(x))
    nH = (x * (H + Hin(x))).sum(-1)
    scale = 1.0
    assert np.abs(nxE).max() < 1e-10 * scale
    assert np.abs(nH).max() < 1e-10 * scale


def test_hybrid_rejects_k0():
    z = SphHarmCoeffs.zeros(3)
    with pytest.raises(ValueError):
        so.solve_hybrid_sphere(0, z, z)


# -- traces, Mie map, fields ---------------------------------------------------


def test_traces_consistency(rng):
    a = SphHarmCoeffs.random(8, rng)
    b = SphHarmCoeffs.random(8, rng)
    sol = so.SphereDebyeSolution(2.2, a, b)
    tr = so.eval_traces_sphere(sol)
    l = np.arange(9)
    mn = np.zeros(9, complex)
    mn[1:] = so.multiplier_normal(2.2, l[1:])
    np.testing.assert_allclose(tr.c.data, a.scaled(mn).data, rtol=1e-14)
    # tangential traces agree with the field evaluated on the surface
    x = random_dirs(20, seed=4)
    E, H = so.eval_field_sphere(sol, x, on_surface=True)
    th, ph = angles(x)
    er, et, ep = so.sphere_frame(th, ph)
    Et = np.zeros((20, 3), complex)
    nE = np.zeros(20, complex)
    for ll in range(1, 9):
        for m in range(-ll, ll + 1):
            i = lm_index(ll, m)
            G = vec_sph_harm(ll, m, VSHKind.GRAD, th, ph, normalized=True)
            S = vec_sph_harm(ll, m, VSHKind.STAR_GRAD, th, ph, normalized=True)
            v = tr.e_grad.data[i] * G + tr.e_star.data[i] * S
            Et += v[:, :1] * et + v[:, 1:] * ep
            nE += tr.c.data[i] * sph_harm_Y(ll, m, th, ph)
    assert np.abs(Et - (E - (E * er).sum(-1)[:, None] * er)).max() < 1e-11
    assert np.abs(nE - (E * er).sum(-1)).max() < 1e-11


def test_mie_scaling_and_zero(rng):
    a = SphHarmCoeffs.random(5, rng)
    sol = so.SphereDebyeSolution(1.1, a, SphHarmCoeffs.zeros(5))
    mie = so.debye_to_mie(sol)
    tr = so.eval_traces_sphere(sol)
    l = mie.a.l
    np.testing.assert_allclose((l * (l + 1) * mie.a.data)[1:], tr.c.data[1:], rtol=1e-14)
    zero = so.debye_to_mie(so.SphereDebyeSolution(1.1, SphHarmCoeffs.zeros(5), SphHarmCoeffs.zeros(5)))
    assert zero.a.norm() == 0 and zero.b.norm() == 0
    E, H = so.eval_field_sphere(zero, np.array([[0.0, 2.0, 1.0]]))
    assert np.all(E == 0) and np.all(H == 0)


def _mie_field_oracle(mie, x, h=1e-5):
    """E = grad(d_r(r v)) + k^2 x v + i k grad(u) x x from scalar potentials only.

    Radial functions are normalized to one on the unit sphere, h_l(kr)/h_l(k).
    """
    k = mie.k
    lmax = mie.a.lmax

    def pots(y):
        r = np.linalg.norm(y)
        th, ph = math.acos(y[2] / r), math.atan2(y[1], y[0])
        v = u = w = wu = 0j
        for l in range(1, lmax + 1):
            h1 = sph_hankel_h1(l, k)
            hl = sph_hankel_h1(l, k * r) / h1
            hp = sph_bessel_derivs(l, k * r)[1] / h1
            for m in range(-l, l + 1):
                Y = sph_harm_Y(l, m, th, ph)
                i = lm_index(l, m)
                v += mie.a.data[i] * hl * Y
                u += mie.b.data[i] * hl * Y
                w += mie.a.data[i] * (hl + k * r * hp) * Y
                wu += mie.b.data[i] * (hl + k * r * hp) * Y
        return np.array([v, u, w, wu])

    def grad(y, idx):
        g = np.zeros(3, complex)
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            g[j] = (-pots(y + 2 * e)[idx] + 8 * pots(y + e)[idx] - 8 * pots(y - e)[idx] + pots(y - 2 * e)[idx]) / (12 * h)
        return g

    P = pots(x)
    E = grad(x, 2) + k**2 * x * P[0] + 1j * k * np.cross(grad(x, 1), x)
    H = grad(x, 3) + k**2 * x * P[1] - 1j * k * np.cross(grad(x, 0), x)
    return E, H


def test_field_matches_potential_oracle(rng):
    a = SphHarmCoeffs.random(4, rng)
    b = SphHarmCoeffs.random(4, rng)
    sol = so.SphereDebyeSolution(1.3, a, b)
    mie = so.debye_to_mie(sol)
    for x in (np.array([1.5, -0.7, 0.9]), np.array([0.0, 3.0, -2.0])):
        E, H = so.eval_field_sphere(sol, x[None])
        Eo, Ho = _mie_field_oracle(mie, x)
        assert np.abs(E[0] - Eo).max() < 1e-8 * np.abs(Eo).max()
        assert np.abs(H[0] - Ho).max() < 1e-8 * np.abs(Ho).max()


def test_far_field_agreement_r50(rng):
    a = SphHarmCoeffs.impulse(3, 2, 1)
    sol = so.SphereDebyeSolution(1.0, a, SphHarmCoeffs.zeros(3))
    mie = so.debye_to_mie(sol)
    x = 50 * random_dirs(1, seed=9)[0]
    E, _ = so.eval_field_sphere(mie, x[None])
    Eo, _ = _mie_field_oracle(mie, x, h=1e-4)
    assert np.abs(E[0] - Eo).max() < 1e-9 * np.abs(Eo).max()


def test_maxwell_equations_by_finite_differences(rng):
    a = SphHarmCoeffs.random(6, rng)
    b = SphHarmCoeffs.random(6, rng)
    k = 1.4
    sol = so.SphereDebyeSolution(k, a, b)
    Ef = lambda y: so.eval_field_sphere(sol, y[None])[0][0]
    Hf = lambda y: so.eval_field_sphere(sol, y[None])[1][0]
    for x in 2.5 * random_dirs(3, seed=5):
        E, H = Ef(x), Hf(x)
        scale = np.abs(E).max() + np.abs(H).max()
        assert np.abs(oracles.curl_fd(Ef, x) - 1j * k * H).max() < 1e-8 * scale
        assert np.abs(oracles.curl_fd(Hf, x) + 1j * k * E).max() < 1e-8 * scale
        assert abs(oracles.div_fd(Ef, x)) < 1e-8 * scale


def test_silver_muller_decay():
    p = SphHarmCoeffs.impulse(4, 2, 1)
    q = SphHarmCoeffs.impulse(4, 3, -1)
    sol = so.solve_hybrid_sphere(2.0, p, q)
    d = random_dirs(16, seed=6)

    def res(R):
        E, H = so.eval_field_sphere(sol, R * d)
        return np.abs(np.cross(H, d) - E).max()

    assert res(100.0) / res(1000.0) >= 10


def test_near_surface_rejected():
    sol = so.SphereDebyeSolution(1.0, SphHarmCoeffs.impulse(2, 1, 0), SphHarmCoeffs.zeros(2))
    with pytest.raises(ValueError):
        so.eval_field_sphere(sol, np.array([[0.0, 0.0, 1.0 + 1e-9]]))


def test_coefficient_csv_round_trip(tmp_path, rng):
    c = SphHarmCoeffs.random(5, rng)
    c.to_csv(tmp_path / "c.csv")
    back = SphHarmCoeffs.from_csv(tmp_path / "c.csv")
    np.testing.assert_allclose(back.data, c.data, rtol=1e-15, atol=0)
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "l,m,re,im"
