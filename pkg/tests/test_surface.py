import csv
import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from debye_bie import surface as sf
from debye_bie.solver import random_bandlimited
from debye_bie.specfun import VSHKind, sph_harm_Y, vec_sph_harm

import oracles


def l2(grid, v):
    return math.sqrt(abs(sf.inner(grid, v, v)))


# -- grids ---------------------------------------------------------------------


def test_areas_and_normals(sphere24, torus32):
    assert abs(sphere24.area - 4 * math.pi) < 1e-10
    assert abs(torus32.area - 4 * math.pi**2 * 2.0 * 0.5) < 1e-10
    for g in (sphere24, torus32):
        assert np.abs(np.linalg.norm(g.normals, axis=1) - 1).max() < 1e-14
        assert np.abs((g.normals * g.e1).sum(-1)).max() < 1e-14
        assert np.abs((g.normals * g.e2).sum(-1)).max() < 1e-14


def test_normals_point_outward(sphere16, torus32):
    assert np.all((sphere16.points * sphere16.normals).sum(-1) > 0)
    # torus: away from the tube centre circle
    p = torus32.points
    rho = np.hypot(p[:, 0], p[:, 1])
    c = np.stack([2.0 * p[:, 0] / rho, 2.0 * p[:, 1] / rho, 0 * rho], axis=-1)
    assert np.all(((p - c) * torus32.normals).sum(-1) > 0)


def test_distance_to_surface(sphere16, torus32):
    assert np.abs(sphere16.surface.distance(sphere16.points)).max() < 1e-14
    assert np.abs(torus32.surface.distance(torus32.points)).max() < 1e-14
    x = np.array([[0.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 1.25]])
    np.testing.assert_allclose(sphere16.surface.distance(x), [1.0, 2.0, 0.25])
    # torus R = 2, r = 0.5: the centre, a point on the core and one above it
    x = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, -2.0, 1.0]])
    np.testing.assert_allclose(torus32.surface.distance(x), [1.5, 0.5, 0.5])


def test_scaled_sphere_area():
    g = sf.sphere_grid(12, radius=2.5)
    assert abs(g.area - 4 * math.pi * 2.5**2) < 1e-10


def test_grid_from_config_and_schema(tmp_path):
    g = sf.grid_from_config({"shape": "torus", "R": 3.0, "r": 1.0, "resolution": [16, 24]})
    assert (g.nu, g.nv) == (16, 24) and g.genus == 1
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"shape": "sphere", "resolution": [10]}))
    assert sf.grid_from_config(str(p)).nu == 10
    import jsonschema

    with pytest.raises(jsonschema.ValidationError):
        sf.grid_from_config({"shape": "cube"})


def test_invalid_torus():
    with pytest.raises(ValueError):
        sf.Torus(1.0, 2.0)


def test_export_csv(tmp_path, sphere16):
    f = sph_harm_Y(2, 1, *sphere16.uv.T)
    sf.export_field_csv(sphere16, f, tmp_path / "f.csv")
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["u", "v", "x", "y", "z", "re", "im"]
    assert len(rows) == sphere16.n_nodes + 1
    assert float(rows[5][5]) == pytest.approx(f[4].real, abs=1e-14)


def test_grid_mismatch(sphere16, torus32):
    with pytest.raises(sf.GridMismatchError):
        sf.surface_grad(sphere16, np.zeros(torus32.n_nodes))
    with pytest.raises(sf.GridMismatchError):
        sf.surface_div(sphere16, np.zeros((sphere16.n_nodes, 3)))


# -- differential operators -----------------------------------------------------


def test_grad_of_constant(sphere16, torus32):
    for g in (sphere16, torus32):
        assert np.abs(sf.surface_grad(g, np.ones(g.n_nodes))).max() < 1e-12


def test_divergence_integrates_to_zero(sphere16, torus32):
    for g in (sphere16, torus32):
        v = random_bandlimited(g, 5, seed=3, tangent=True)
        assert abs(sf.integrate(g, sf.surface_div(g, v))) < 1e-10 * l2(g, v)


def test_sphere_laplacian_eigenvalues():
    g = sf.sphere_grid(32)
    th, ph = g.uv.T
    for l in range(0, 17):
        Y = sph_harm_Y(l, min(l, 3), th, ph)
        lam = sf.inner(g, sf.laplace_beltrami(g, Y), Y)
        assert abs(lam + l * (l + 1)) <= 1e-8 * max(1, l * (l + 1))


def test_rot90_squares_to_minus_identity(sphere16, torus32):
    for g in (sphere16, torus32):
        v = random_bandlimited(g, 4, seed=1, tangent=True)
        np.testing.assert_allclose(sf.rot90(g, sf.rot90(g, v)), -v, atol=1e-15)
        # n x v is again tangent and orthogonal to v pointwise
        V, W = g.to_cartesian(v), g.to_cartesian(sf.rot90(g, v))
        np.testing.assert_allclose(W, np.cross(g.normals, V), atol=1e-13)


@pytest.mark.parametrize("which", ["sphere", "torus"])
def test_grad_div_adjoint(which, sphere16, torus32):
    g = sphere16 if which == "sphere" else torus32
    for seed in range(3):
        f = random_bandlimited(g, 5, seed=seed)
        v = random_bandlimited(g, 5, seed=seed + 10, tangent=True)
        lhs = sf.inner(g, sf.surface_grad(g, f), v) + sf.inner(g, f, sf.surface_div(g, v))
        assert abs(lhs) < 1e-9 * l2(g, f) * l2(g, v)


# -- R0 -------------------------------------------------------------------------


def test_R0_sphere_eigenfunctions(sphere16):
    th, ph = sphere16.uv.T
    for l, m in [(1, 0), (4, -3), (9, 2)]:
        Y = sph_harm_Y(l, m, th, ph)
        np.testing.assert_allclose(sf.laplace_beltrami_partial_inverse_R0(sphere16, Y), -Y / (l * (l + 1)),
                                   atol=1e-12)


def test_R0_zero(sphere16, torus32):
    for g in (sphere16, torus32):
        assert np.all(sf.laplace_beltrami_partial_inverse_R0(g, np.zeros(g.n_nodes)) == 0)


def test_R0_torus_apply_inverse_apply(torus32):
    f = random_bandlimited(torus32, 6, seed=5)
    u = sf.laplace_beltrami_partial_inverse_R0(torus32, f)
    assert np.abs(sf.laplace_beltrami(torus32, u) - f).max() < 1e-8 * np.abs(f).max()
    assert abs(sf.integrate(torus32, u)) < 1e-10 * l2(torus32, u)


def test_R0_mean_zero_handling(sphere16):
    th, ph = sphere16.uv.T
    Y = sph_harm_Y(2, 0, th, ph)
    with pytest.raises(sf.MeanZeroError):
        sf.laplace_beltrami_partial_inverse_R0(sphere16, Y + 1e-3)
    with pytest.warns(RuntimeWarning):
        u = sf.laplace_beltrami_partial_inverse_R0(sphere16, Y + 5e-12)
    np.testing.assert_allclose(u, -Y / 6, atol=1e-11)


# -- currents -------------------------------------------------------------------


def test_currents_Y10(sphere16):
    th, ph = sphere16.uv.T
    Y = sph_harm_Y(1, 0, th, ph)
    j, m = sf.currents_from_debye(sphere16, Y, np.zeros_like(Y), 1.0)
    ref = 1j * (-0.5) * vec_sph_harm(1, 0, VSHKind.GRAD, th, ph)
    np.testing.assert_allclose(j, ref, atol=1e-13)
    np.testing.assert_allclose(m, sf.rot90(sphere16, j), atol=0)


def test_currents_low_frequency(sphere16):
    r = random_bandlimited(sphere16, 6, seed=2)
    q = random_bandlimited(sphere16, 6, seed=3)
    j, _ = sf.currents_from_debye(sphere16, r, q, 1e-8)
    assert l2(sphere16, j) / l2(sphere16, r) < 1e-6


def test_currents_divergence_identities_torus(torus32):
    k = 1.3
    r = random_bandlimited(torus32, 6, seed=7)
    q = random_bandlimited(torus32, 6, seed=8)
    j, m = sf.currents_from_debye(torus32, r, q, k)
    assert np.abs(sf.surface_div(torus32, j) - 1j * k * r).max() < 1e-8 * np.abs(r).max()
    assert np.abs(sf.surface_div(torus32, m) - 1j * k * q).max() < 1e-8 * np.abs(q).max()
    H = sf.harmonic_basis(torus32)
    j2, _ = sf.currents_from_debye(torus32, r, q, k, j_H=0.3 * H[0])
    assert np.abs(sf.surface_div(torus32, j2) - 1j * k * r).max() < 1e-8 * np.abs(r).max()


def test_currents_reject_nonzero_mean(sphere16):
    with pytest.raises(sf.MeanZeroError):
        sf.currents_from_debye(sphere16, np.ones(sphere16.n_nodes), np.zeros(sphere16.n_nodes), 1.0)


# -- harmonic fields ------------------------------------------------------------


def test_sphere_has_no_harmonic_fields(sphere16):
    assert sf.harmonic_basis(sphere16).shape == (0, sphere16.n_nodes, 2)


def test_torus_harmonic_basis(torus32):
    H = sf.harmonic_basis(torus32)
    assert H.shape == (2, torus32.n_nodes, 2)
    G = np.array([[sf.inner(torus32, a, b) for b in H] for a in H])
    assert np.abs(G - np.eye(2)).max() < 1e-12
    for h in H:
        assert np.abs(sf.surface_div(torus32, h)).max() < 1e-8
        assert np.abs(sf.surface_div(torus32, sf.rot90(torus32, h))).max() < 1e-8
    A = H.reshape(2, -1).T
    B = sf.torus_harmonic_pair(torus32).reshape(2, -1).T
    ang = oracles.principal_angles(A, B, np.repeat(torus32.weights, 2))
    assert ang.max() < 1e-6


def test_analytic_pair_is_harmonic(torus32):
    for h in sf.torus_harmonic_pair(torus32):
        assert np.abs(sf.surface_div(torus32, h)).max() < 1e-10
        assert np.abs(sf.surface_div(torus32, sf.rot90(torus32, h))).max() < 1e-10


# -- Hodge decomposition -----------------------------------------------------------


def test_hodge_pure_gradient(sphere16):
    th, ph = sphere16.uv.T
    v = vec_sph_harm(2, 1, VSHKind.GRAD, th, ph)
    parts = sf.hodge_decompose(sphere16, v)
    np.testing.assert_allclose(parts.grad_part, v, atol=1e-12)
    assert np.abs(parts.rot_grad_part).max() < 1e-12
    assert parts.residual < 1e-12


def test_hodge_pure_harmonic(torus32):
    h = sf.torus_harmonic_pair(torus32)[0]
    parts = sf.hodge_decompose(torus32, h)
    assert l2(torus32, parts.grad_part) < 1e-8 * l2(torus32, h)
    assert l2(torus32, parts.rot_grad_part) < 1e-8 * l2(torus32, h)
    assert l2(torus32, parts.harmonic_part - h) < 1e-8 * l2(torus32, h)


@pytest.mark.parametrize("which", ["sphere", "torus"])
def test_hodge_random_orthogonal(which, sphere16, torus32):
    g = sphere16 if which == "sphere" else torus32
    v = random_bandlimited(g, 5, seed=4, tangent=True)
    p = sf.hodge_decompose(g, v)
    parts = [p.grad_part, p.rot_grad_part, p.harmonic_part]
    nv = l2(g, v) ** 2
    for a in range(3):
        for b in range(a + 1, 3):
            assert abs(sf.inner(g, parts[a], parts[b])) < 1e-9 * nv
    assert abs(sum(l2(g, x) ** 2 for x in parts) - nv) < 1e-8 * nv
    assert p.residual < 1e-8


# -- mean zero ------------------------------------------------------------------------


def test_mean_zero_project(sphere16, torus32):
    th, ph = sphere16.uv.T
    assert np.abs(sf.mean_zero_project(sphere16, np.full(sphere16.n_nodes, 3.0 + 1j))).max() < 1e-14
    Y = sph_harm_Y(3, 1, th, ph)
    np.testing.assert_allclose(sf.mean_zero_project(sphere16, Y), Y, atol=1e-15)
    assert sf.is_mean_zero(sphere16, Y).all()
    assert not sf.is_mean_zero(sphere16, Y + 1).any()
    f = np.random.default_rng(0).normal(size=torus32.n_nodes)
    p1 = sf.mean_zero_project(torus32, f)
    np.testing.assert_allclose(sf.mean_zero_project(torus32, p1), p1, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_projection_idempotent_property(c):
    g = sf.sphere_grid(6)
    x = g.points
    f = c[0] + c[1] * x[:, 0] + c[2] * x[:, 1] * x[:, 2]
    p = sf.mean_zero_project(g, f)
    assert abs(sf.integrate(g, p)) < 1e-12 * (1 + abs(np.array(c)).sum())
    np.testing.assert_allclose(sf.mean_zero_project(g, p), p, atol=1e-13)


def test_interpolation_and_resampling(torus32):
    f = random_bandlimited(torus32, 5, seed=9)
    fine = sf.resample_periodic(torus32, f, 48, 64)
    g2 = sf.torus_grid(2.0, 0.5, 48, 64)
    direct = sf.interpolate(torus32, f, g2.uv[:, 0], g2.uv[:, 1])
    np.testing.assert_allclose(fine, direct, atol=1e-12)
    np.testing.assert_allclose(sf.interpolate(torus32, f, torus32.uv[:, 0], torus32.uv[:, 1]), f, atol=1e-12)
