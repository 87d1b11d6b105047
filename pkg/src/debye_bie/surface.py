"""Parametric surfaces of revolution, quadrature grids and surface calculus.

Both shipped surfaces (the sphere and the torus) are surfaces of revolution

    x(u, v) = (rho(u) cos v, rho(u) sin v, z(u)),

with ``u`` a profile parameter and ``v`` the azimuth.  Tangent fields are
stored by their components in the orthonormal frame ``e1 = x_u / |x_u|``,
``e2 = n x e1`` (``n`` the outward unit normal), so that ``n x`` is the
rotation ``(a, b) -> (-b, a)`` and every field is automatically tangent.

The differential operators are assembled as :class:`BlockCirculant` objects
(one dense block per azimuthal Fourier mode).  On the sphere they act through
spherical-harmonic analysis on the Gauss-Legendre grid; on the torus through
Fourier differentiation in the profile variable.  Even Fourier grids carry a
Nyquist mode that differentiation annihilates; the torus operators treat it
as constant, and the nullspace computations exclude it.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .circulant import BlockCirculant
from .specfun import legendre_columns

__all__ = [
    "ParametricSurface",
    "Sphere",
    "Torus",
    "SurfaceGrid",
    "MeanZeroError",
    "GridMismatchError",
    "RankDeficiencyError",
    "HodgeParts",
    "sphere_grid",
    "torus_grid",
    "grid_from_config",
    "surface_grad",
    "surface_div",
    "rot90",
    "laplace_beltrami",
    "laplace_beltrami_partial_inverse_R0",
    "currents_from_debye",
    "harmonic_basis",
    "torus_harmonic_pair",
    "hodge_decompose",
    "mean_zero_project",
    "is_mean_zero",
    "integrate",
    "inner",
    "interpolate",
    "export_field_csv",
]


class MeanZeroError(ValueError):
    """A density that must have mean zero on every component does not."""


class GridMismatchError(ValueError):
    """A field does not live on the grid it is used with."""


class RankDeficiencyError(RuntimeError):
    """The numerical nullspace does not have the dimension the topology predicts."""


# ---------------------------------------------------------------------------
# surfaces
# ---------------------------------------------------------------------------


class ParametricSurface(ABC):
    """Surface of revolution about the z axis given by its profile curve."""

    genus: int = 0
    n_components: int = 1
    #: +1 if ``x_u x x_v`` points outward, -1 otherwise
    orientation: int = 1
    name: str = "surface"

    @abstractmethod
    def profile(self, u):
        """Return ``rho, z, rho', z'`` along the profile parameter ``u``."""

    def point(self, u, v):
        rho, z, _, _ = self.profile(np.asarray(u, float))
        v = np.asarray(v, float)
        return np.stack(np.broadcast_arrays(rho * np.cos(v), rho * np.sin(v), z), axis=-1)

    def frame(self, u, v):
        """``(x, n, e1, e2, |x_u|, rho)`` at parameter points (broadcast)."""
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        rho, z, dr, dz = self.profile(u)
        cv, sv = np.cos(v), np.sin(v)
        hu = np.hypot(dr, dz)
        x = np.stack([rho * cv, rho * sv, z], axis=-1)
        e1 = np.stack([dr * cv, dr * sv, dz], axis=-1) / hu[..., None]
        ev = np.stack([-sv, cv, np.zeros_like(v)], axis=-1)  # x_v / |x_v|
        s = self.orientation
        n = s * np.stack([-dz * cv, -dz * sv, dr], axis=-1) / hu[..., None]
        return x, n, e1, s * ev, hu, rho

    def distance(self, x) -> np.ndarray:
        """Euclidean distance from points ``x`` (shape ``(..., 3)``) to the surface."""
        x = np.asarray(x, float)
        return self._profile_distance(np.hypot(x[..., 0], x[..., 1]), x[..., 2])

    @abstractmethod
    def _profile_distance(self, rho, z):
        """Distance from ``(rho, z)`` to the profile curve in the meridian half plane."""

    def describe(self) -> dict:
        return {"shape": self.name}


class Sphere(ParametricSurface):
    """Sphere of the given radius; ``u`` is the colatitude."""

    name = "sphere"

    def __init__(self, radius: float = 1.0):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)

    def profile(self, u):
        a = self.radius
        return a * np.sin(u), a * np.cos(u), a * np.cos(u), -a * np.sin(u)

    def _profile_distance(self, rho, z):
        return np.abs(np.hypot(rho, z) - self.radius)

    def describe(self):
        return {"shape": "sphere", "radius": self.radius}


class Torus(ParametricSurface):
    """Torus ``x(s, t) = ((R + r cos t) cos s, (R + r cos t) sin s, r sin t)``.

    The profile parameter is ``u = t`` and the azimuth ``v = s``.
    """

    name = "torus"
    genus = 1
    orientation = -1

    def __init__(self, R: float = 2.0, r: float = 0.5):
        if not R > r > 0:
            raise ValueError("torus radii must satisfy R > r > 0")
        self.R, self.r = float(R), float(r)

    def profile(self, u):
        R, r = self.R, self.r
        return R + r * np.cos(u), r * np.sin(u), -r * np.sin(u), r * np.cos(u)

    def _profile_distance(self, rho, z):
        return np.abs(np.hypot(rho - self.R, z) - self.r)

    def describe(self):
        return {"shape": "torus", "R": self.R, "r": self.r}


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


class SurfaceGrid:
    """Tensor quadrature grid on a surface of revolution.

    Nodes are ordered with the profile index slowest: node ``iu * nv + iv``
    sits at ``(u[iu], v[iv])``.  ``weights`` are area weights, so that
    ``weights @ f`` integrates ``f`` over the surface.
    """

    def __init__(self, surface: ParametricSurface, u, wu, nv: int, periodic_u: bool):
        self.surface = surface
        self.u = np.asarray(u, float)
        self.wu = np.asarray(wu, float)
        self.nu = self.u.size
        self.nv = int(nv)
        self.v = 2 * np.pi * np.arange(self.nv) / self.nv
        self.periodic_u = periodic_u
        U, V = np.meshgrid(self.u, self.v, indexing="ij")
        x, n, e1, e2, hu, rho = surface.frame(U, V)
        self.points = x.reshape(-1, 3)
        self.normals = n.reshape(-1, 3)
        self.e1 = e1.reshape(-1, 3)
        self.e2 = e2.reshape(-1, 3)
        self.hu = hu[:, 0].copy()  # |x_u| along the profile
        self.rho = rho[:, 0].copy()  # |x_v| = distance to the axis
        self.profile_weights = self.wu * self.hu * self.rho * (2 * np.pi / self.nv)
        self.weights = np.repeat(self.profile_weights, self.nv)
        self.uv = np.stack([U.ravel(), V.ravel()], axis=-1)

    @property
    def n_nodes(self) -> int:
        return self.nu * self.nv

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    @property
    def genus(self) -> int:
        return self.surface.genus

    def describe(self) -> dict:
        d = self.surface.describe()
        d["resolution"] = [self.nu, self.nv]
        return d

    # -- field helpers --------------------------------------------------

    def check_scalar(self, f, name="field"):
        f = np.asarray(f)
        if f.shape != (self.n_nodes,):
            raise GridMismatchError(f"{name} has shape {f.shape}, grid needs ({self.n_nodes},)")
        return f

    def check_tangent(self, t, name="field"):
        t = np.asarray(t)
        if t.shape != (self.n_nodes, 2):
            raise GridMismatchError(f"{name} has shape {t.shape}, grid needs ({self.n_nodes}, 2)")
        return t

    def to_cartesian(self, t):
        t = self.check_tangent(t)
        return t[:, :1] * self.e1 + t[:, 1:] * self.e2

    def from_cartesian(self, F):
        """Frame components of the tangential part of Cartesian vectors ``F`` (shape ``(N, 3)``)."""
        F = np.asarray(F)
        return np.stack([(F * self.e1).sum(-1), (F * self.e2).sum(-1)], axis=-1)

    def normal_component(self, F):
        return (np.asarray(F) * self.normals).sum(-1)

    def max_spacing(self) -> float:
        """Largest distance between neighbouring nodes."""
        P = self.points.reshape(self.nu, self.nv, 3)
        dv = np.linalg.norm(P - np.roll(P, 1, axis=1), axis=-1).max()
        Pu = np.concatenate([P, P[:1]]) if self.periodic_u else P
        du = np.linalg.norm(np.diff(Pu, axis=0), axis=-1).max() if self.nu > 1 else 0.0
        return float(max(du, dv))

    @cached_property
    def calculus(self) -> "_Calculus":
        return _SphereCalculus(self) if isinstance(self.surface, Sphere) else _PeriodicCalculus(self)


def sphere_grid(n_theta: int = 32, n_phi: int | None = None, radius: float = 1.0) -> SurfaceGrid:
    """Gauss-Legendre nodes in ``cos(theta)`` times ``n_phi`` (default ``2 n_theta``) azimuths.

    Spherical harmonics of degree below ``n_theta`` are resolved exactly.
    """
    n_phi = 2 * n_theta if n_phi is None else n_phi
    if n_theta < 2 or n_phi < 2 * n_theta - 1:
        raise ValueError("sphere grid needs n_theta >= 2 and n_phi >= 2 n_theta - 1")
    x, w = np.polynomial.legendre.leggauss(n_theta)
    x, w = x[::-1], w[::-1]  # colatitude increasing
    theta = np.arccos(x)
    # GL weights live in cos(theta); divide by |x_u| rho = a^2 sin(theta)
    wu = w / np.sin(theta)
    return SurfaceGrid(Sphere(radius), theta, wu, n_phi, periodic_u=False)


def torus_grid(R: float = 2.0, r: float = 0.5, n_t: int = 64, n_s: int = 64) -> SurfaceGrid:
    """Uniform (trapezoid) grid in both angles of the torus."""
    if n_t < 4 or n_s < 4:
        raise ValueError("torus grid needs at least 4 nodes per direction")
    t = 2 * np.pi * np.arange(n_t) / n_t
    return SurfaceGrid(Torus(R, r), t, np.full(n_t, 2 * np.pi / n_t), n_s, periodic_u=True)


_GRID_SCHEMA = {
    "type": "object",
    "properties": {
        "shape": {"enum": ["sphere", "torus"]},
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "R": {"type": "number", "exclusiveMinimum": 0},
        "r": {"type": "number", "exclusiveMinimum": 0},
        "resolution": {"type": "array", "items": {"type": "integer", "minimum": 2},
                       "minItems": 1, "maxItems": 2},
    },
    "required": ["shape"],
}


def grid_from_config(cfg) -> SurfaceGrid:
    """Grid from a JSON object (``dict``, JSON text or a path to a JSON file).

    Keys: ``shape`` (``sphere`` or ``torus``), ``radius`` (sphere), ``R`` and
    ``r`` (torus), ``resolution`` (``[nu]`` or ``[nu, nv]``).
    """
    import jsonschema

    if isinstance(cfg, str):
        text = cfg
        if not text.lstrip().startswith("{"):
            with open(cfg) as fh:
                text = fh.read()
        cfg = json.loads(text)
    jsonschema.validate(cfg, _GRID_SCHEMA)
    res = cfg.get("resolution")
    if cfg["shape"] == "sphere":
        nt = res[0] if res else 32
        nph = res[1] if res and len(res) > 1 else None
        return sphere_grid(nt, nph, cfg.get("radius", 1.0))
    nt = res[0] if res else 64
    ns = res[1] if res and len(res) > 1 else nt
    return torus_grid(cfg.get("R", 2.0), cfg.get("r", 0.5), nt, ns)


def export_field_csv(grid: SurfaceGrid, values, path) -> None:
    """Write a scalar nodal field as CSV with columns ``u, v, x, y, z, re, im``."""
    f = grid.check_scalar(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u", "v", "x", "y", "z", "re", "im"])
        for (u, v), p, val in zip(grid.uv, grid.points, f):
            w.writerow([f"{x:.15e}" for x in (u, v, *p, complex(val).real, complex(val).imag)])


# ---------------------------------------------------------------------------
# calculus backends
# ---------------------------------------------------------------------------


_ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


class _Calculus(ABC):
    """Mode-block operators ``grad``, ``div``, ``rot`` and ``R0`` for one grid."""

    def __init__(self, grid: SurfaceGrid):
        self.grid = grid
        self.nu, self.nv = grid.nu, grid.nv

    @cached_property
    def rot(self) -> BlockCirculant:
        return BlockCirculant.pointwise(np.broadcast_to(_ROT, (self.nu, 2, 2)), self.nv)

    @cached_property
    def grad(self) -> BlockCirculant:
        return BlockCirculant.from_mode_function(self._grad_mode, self.nu, self.nv, 2, 1)

    @cached_property
    def div(self) -> BlockCirculant:
        return BlockCirculant.from_mode_function(self._div_mode, self.nu, self.nv, 1, 2)

    @cached_property
    def laplacian(self) -> BlockCirculant:
        return self.div @ self.grad

    @cached_property
    def R0(self) -> BlockCirculant:
        return BlockCirculant.from_mode_function(self._R0_mode, self.nu, self.nv, 1, 1)

    @cached_property
    def mean_projector(self) -> BlockCirculant:
        """``f -> f - mean(f)``."""
        w = self.grid.profile_weights
        p0 = np.eye(self.nu) - np.outer(np.ones(self.nu), w) / w.sum()

        def mode(idx, m):
            return p0 if m == 0 else np.eye(self.nu)

        return BlockCirculant.from_mode_function(mode, self.nu, self.nv, 1, 1)

    @abstractmethod
    def _grad_mode(self, idx: int, m: int): ...

    @abstractmethod
    def _div_mode(self, idx: int, m: int): ...

    @abstractmethod
    def _R0_mode(self, idx: int, m: int): ...

    def harmonic_fields(self) -> np.ndarray:
        return np.zeros((0, self.grid.n_nodes, 2))


class _SphereCalculus(_Calculus):
    """Exact spherical-harmonic calculus on the Gauss-Legendre grid."""

    def __init__(self, grid):
        super().__init__(grid)
        self.lmax = grid.nu - 1
        self.radius = grid.surface.radius
        self._leg = {m: (P, dP, Q) for m, P, dP, Q in legendre_columns(self.lmax, grid.u)}

    def _parts(self, m):
        am = abs(m)
        if am > self.lmax or 2 * am == self.nv:
            return None
        P, dP, Q = self._leg[am]
        a = self.radius
        W = 2 * np.pi * self.grid.wu * self.grid.hu * self.grid.rho / a**2  # GL weights * 2 pi
        ls = np.arange(am, self.lmax + 1)
        return P, dP / a, Q / a, W, ls

    def _grad_mode(self, idx, m):
        out = np.zeros((self.nu, 2, self.nu), dtype=complex)
        p = self._parts(m)
        if p is not None:
            P, dP, Q, W, _ = p
            A = P * W  # analysis
            out[:, 0, :] = dP.T @ A
            out[:, 1, :] = (1j * m * Q).T @ A
        return out.reshape(2 * self.nu, self.nu)

    def _div_mode(self, idx, m):
        out = np.zeros((self.nu, 1, self.nu, 2), dtype=complex)
        p = self._parts(m)
        if p is not None:
            P, dP, Q, W, _ = p
            out[:, 0, :, 0] = -P.T @ (dP * W)
            out[:, 0, :, 1] = P.T @ (1j * m * Q * W)
        return out.reshape(self.nu, 2 * self.nu)

    def _R0_mode(self, idx, m):
        p = self._parts(m)
        if p is None:
            return np.zeros((self.nu, self.nu))
        P, _, _, W, ls = p
        L = ls * (ls + 1.0)
        inv = np.where(L > 0, -(self.radius**2) / np.where(L > 0, L, 1.0), 0.0)
        return P.T @ (inv[:, None] * P * W)


class _PeriodicCalculus(_Calculus):
    """Fourier collocation in a periodic profile variable (torus)."""

    def __init__(self, grid):
        super().__init__(grid)
        if not grid.periodic_u:
            raise ValueError("periodic calculus needs a periodic profile variable")
        n = self.nu
        k = np.fft.fftfreq(n) * n
        if n % 2 == 0:
            k[n // 2] = 0.0  # Nyquist mode: differentiated to zero
        I = np.eye(n)
        self.D = np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(I, axis=0), axis=0))
        self.sigma = grid.surface.orientation

    def _meff(self, m):
        return 0 if 2 * abs(m) == self.nv else m

    def _grad_mode(self, idx, m):
        g = self.grid
        out = np.zeros((self.nu, 2, self.nu), dtype=complex)
        out[:, 0, :] = self.D / g.hu[:, None]
        out[:, 1, :] = np.diag(self.sigma * 1j * self._meff(m) / g.rho)
        return out.reshape(2 * self.nu, self.nu)

    def _div_mode(self, idx, m):
        g = self.grid
        out = np.zeros((self.nu, 1, self.nu, 2), dtype=complex)
        out[:, 0, :, 0] = (self.D * g.rho[None, :]) / (g.hu * g.rho)[:, None]
        out[:, 0, :, 1] = np.diag(self.sigma * 1j * self._meff(m) / g.rho)
        return out.reshape(self.nu, 2 * self.nu)

    def nyquist_free_basis(self) -> np.ndarray:
        """Orthonormal basis of profile vectors without the Nyquist component."""
        n = self.nu
        if n % 2:
            return np.eye(n)
        nyq = (-1.0) ** np.arange(n) / math.sqrt(n)
        q, _ = np.linalg.qr(np.eye(n) - np.outer(nyq, nyq))
        return q[:, : n - 1]

    def _R0_mode(self, idx, m):
        L = self._div_mode(idx, m) @ self._grad_mode(idx, m)
        if self._meff(m) != 0:
            return np.linalg.solve(L, np.eye(self.nu))
        Z = self.nyquist_free_basis()
        if m == 0:
            w = self.grid.profile_weights
            Z = Z - np.outer(np.ones(self.nu), w @ Z) / w.sum()
            Z, _ = np.linalg.qr(Z)
            Z = Z[:, : self.nu - 2]
            P = np.eye(self.nu) - np.outer(np.ones(self.nu), w) / w.sum()
        else:
            P = np.eye(self.nu)
        return Z @ np.linalg.pinv(L @ Z, rcond=1e-13) @ P

    def hodge_laplacian_mode(self, idx, m):
        G, Dv = self._grad_mode(idx, m), self._div_mode(idx, m)
        rot = np.kron(np.eye(self.nu), _ROT)
        return G @ Dv - rot @ G @ Dv @ rot

    def harmonic_fields(self) -> np.ndarray:
        """Nullspace of the 1-form Laplacian, excluding Nyquist modes."""
        Zs = self.nyquist_free_basis()
        Z = np.zeros((2 * self.nu, 2 * Zs.shape[1]))
        Z[0::2, 0::2] = Zs
        Z[1::2, 1::2] = Zs
        ms = np.rint(np.fft.fftfreq(self.nv) * self.nv).astype(int)
        svals, vecs = [], []
        for idx, m in enumerate(ms):
            if 2 * abs(m) == self.nv:
                continue
            _, s, vh = np.linalg.svd(self.hodge_laplacian_mode(idx, m) @ Z)
            svals.append(s)
            vecs.append((m, s, vh))
        smax = max(s.max() for s in svals)
        tol = 1e3 * np.finfo(float).eps * smax
        fields = []
        for m, s, vh in vecs:
            for j in np.nonzero(s < tol)[0]:
                prof = (Z @ vh[j].conj()).reshape(self.nu, 2)
                if m != 0:
                    raise RankDeficiencyError(f"harmonic field found in azimuthal mode {m}")
                # mode-0 operators are real: take a real representative
                prof = prof.real if np.abs(prof.real).max() >= np.abs(prof.imag).max() else prof.imag
                fields.append(np.repeat(prof, self.nv, axis=0))
        return np.array(fields).reshape(-1, self.grid.n_nodes, 2)


# ---------------------------------------------------------------------------
# public field operations
# ---------------------------------------------------------------------------


def integrate(grid: SurfaceGrid, f) -> complex:
    return complex(grid.weights @ grid.check_scalar(f))


def inner(grid: SurfaceGrid, a, b) -> complex:
    """L2 inner product ``int a conj(b) dA`` of scalar or tangent fields."""
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim == 2:
        return complex(np.sum(grid.weights[:, None] * a * np.conj(b)))
    return complex(np.sum(grid.weights * a * np.conj(b)))


def surface_grad(grid: SurfaceGrid, f):
    """Surface gradient; returns frame components ``(N, 2)``."""
    return grid.calculus.grad.apply(grid.check_scalar(f))


def surface_div(grid: SurfaceGrid, v):
    return grid.calculus.div.apply(grid.check_tangent(v))


def rot90(grid: SurfaceGrid, v):
    """``n x v`` for a tangent field."""
    v = grid.check_tangent(v)
    return np.stack([-v[:, 1], v[:, 0]], axis=-1)


def laplace_beltrami(grid: SurfaceGrid, f):
    return grid.calculus.laplacian.apply(grid.check_scalar(f))


def _mean(grid, f):
    return integrate(grid, f) / grid.area


def _dirichlet_weights(x, n):
    """Nyquist-free trigonometric interpolation weights ``(1/n) sum_{|j|<n/2} e^{ijx}``."""
    h = (n - 1) // 2
    half = 0.5 * np.asarray(x, float)
    den = np.sin(half)
    small = np.abs(den) < 1e-8
    out = np.empty_like(half)
    out[~small] = np.sin((2 * h + 1) * half[~small]) / den[~small]
    out[small] = (2 * h + 1) * np.cos((2 * h + 1) * half[small]) / np.cos(half[small])
    return out / n


def _sphere_mode_coeffs(grid, f):
    """Spherical-harmonic coefficients ``{m: c_lm over l}`` of a grid scalar."""
    calc = grid.calculus
    F = np.fft.fft(np.asarray(f).reshape(grid.nu, grid.nv), axis=1) / grid.nv
    out = {}
    for m in range(-calc.lmax, calc.lmax + 1):
        p = calc._parts(m)
        if p is not None:
            P, _, _, W, _ = p
            out[m] = (P * W) @ F[:, m % grid.nv]
    return out


def _sphere_synthesize(coeffs, lmax, radius, theta, phi, gradient=False):
    """Evaluate ``sum c_lm Y_lm`` (or its frame gradient) at arbitrary points."""
    out = np.zeros((theta.size, 2 if gradient else 1), dtype=complex)
    for am, P, dP, Q in legendre_columns(lmax, theta):
        for m in {am, -am}:
            c = coeffs.get(m)
            if c is None:
                continue
            e = np.exp(1j * m * phi)
            if gradient:
                out[:, 0] += (c @ dP) * e / radius
                out[:, 1] += (c @ (1j * m * Q)) * e / radius
            else:
                out[:, 0] += (c @ P) * e
    return out if gradient else out[:, 0]


def interpolate(grid: SurfaceGrid, values, u, v):
    """Spectral interpolation of a grid field to parameter points ``(u, v)``.

    Scalars (shape ``(N,)``) and tangent fields (shape ``(N, 2)``, frame
    components) are supported.  The torus uses trigonometric interpolation
    in both parameters; the sphere its spherical-harmonic expansion, tangent
    fields through their two Hodge potentials.
    """
    values = np.asarray(values)
    u = np.atleast_1d(np.asarray(u, float))
    v = np.atleast_1d(np.asarray(v, float))
    tangent = values.ndim == 2
    if tangent:
        grid.check_tangent(values)
    else:
        grid.check_scalar(values)
    if isinstance(grid.surface, Sphere):
        calc = grid.calculus
        a = grid.surface.radius
        if not tangent:
            return _sphere_synthesize(_sphere_mode_coeffs(grid, values), calc.lmax, a, u, v)
        alpha = calc.R0.apply(calc.div.apply(values))
        beta = -calc.R0.apply(calc.div.apply(rot90(grid, values)))
        ga = _sphere_synthesize(_sphere_mode_coeffs(grid, alpha), calc.lmax, a, u, v, True)
        gb = _sphere_synthesize(_sphere_mode_coeffs(grid, beta), calc.lmax, a, u, v, True)
        return ga + np.stack([-gb[:, 1], gb[:, 0]], axis=-1)
    Iu = _dirichlet_weights(u[:, None] - grid.u[None, :], grid.nu)
    Iv = _dirichlet_weights(v[:, None] - grid.v[None, :], grid.nv)
    F = values.reshape(grid.nu, grid.nv, -1)
    out = np.einsum("pa,abc,pb->pc", Iu, F, Iv, optimize=True)
    return out if tangent else out[:, 0]


def _nyquist_free_spectrum(F, axis):
    n = F.shape[axis]
    if n % 2 == 0:
        idx = [slice(None)] * F.ndim
        idx[axis] = n // 2
        F[tuple(idx)] = 0.0
    return F


def resample_periodic(grid: SurfaceGrid, values, nu: int, nv: int):
    """Trigonometric interpolation of a field on a periodic grid onto the uniform ``nu x nv`` grid.

    Equivalent to :func:`interpolate` at the nodes of the finer grid, by
    zero padding of the Nyquist-free 2-d spectrum.
    """
    if not grid.periodic_u:
        raise ValueError("resampling needs a periodic grid")
    values = np.asarray(values)
    tangent = values.ndim == 2
    F = np.fft.fft2(values.reshape(grid.nu, grid.nv, -1), axes=(0, 1))
    F = _nyquist_free_spectrum(_nyquist_free_spectrum(F, 0), 1)
    G = np.zeros((nu, nv, F.shape[2]), dtype=complex)
    fu = np.rint(np.fft.fftfreq(grid.nu) * grid.nu).astype(int)
    fv = np.rint(np.fft.fftfreq(grid.nv) * grid.nv).astype(int)
    if grid.nu > nu or grid.nv > nv:
        raise ValueError("resampling only refines the grid")
    G[np.ix_(fu % nu, fv % nv)] = F
    out = np.fft.ifft2(G, axes=(0, 1)) * (nu * nv / (grid.nu * grid.nv))
    out = out.reshape(nu * nv, -1)
    return out if tangent else out[:, 0]


def mean_zero_project(grid: SurfaceGrid, f):
    """Subtract the mean (the shipped surfaces are connected)."""
    f = grid.check_scalar(f)
    return f - _mean(grid, f)


def is_mean_zero(grid: SurfaceGrid, f, tol: float = 1e-10) -> np.ndarray:
    """Boolean per boundary component: ``|mean| < tol * max(1, rms(f))``."""
    f = grid.check_scalar(f)
    rms = math.sqrt(max(inner(grid, f, f).real, 0.0) / grid.area)
    return np.array([abs(_mean(grid, f)) < tol * max(1.0, rms)])


def _require_mean_zero(grid, f, name):
    f = grid.check_scalar(f)
    if np.all(f == 0):
        return f
    mean = abs(_mean(grid, f))
    rms = math.sqrt(max(inner(grid, f, f).real, 0.0) / grid.area)
    scale = max(1.0, rms)
    if mean >= 1e-10 * scale:
        raise MeanZeroError(f"{name} has mean {mean:.3e} on its component (needs mean zero)")
    if mean > 1e-13 * scale:
        warnings.warn(f"{name}: mean {mean:.1e} projected out", RuntimeWarning, stacklevel=3)
    return f - _mean(grid, f)


def laplace_beltrami_partial_inverse_R0(grid: SurfaceGrid, f):
    """Mean-zero solution ``u`` of ``Laplace u = f`` for mean-zero ``f``."""
    f = _require_mean_zero(grid, f, "R0 input")
    return grid.calculus.R0.apply(f)


def currents_from_debye(grid: SurfaceGrid, r, q, k, j_H=None):
    """Currents ``(j, m)`` from Debye sources.

    ``j = grad(ik R0 r) + n x grad(-ik R0 q) + j_H`` and ``m = n x j``, so that
    ``div j = ik r`` and ``div(n x j) = ik q``.
    """
    r = _require_mean_zero(grid, r, "r")
    q = _require_mean_zero(grid, q, "q")
    c = grid.calculus
    psi = 1j * k * c.R0.apply(r)
    psi_m = -1j * k * c.R0.apply(q)
    j = c.grad.apply(psi) + rot90(grid, c.grad.apply(psi_m))
    if j_H is not None:
        j = j + grid.check_tangent(j_H)
    return j, rot90(grid, j)


def harmonic_basis(grid: SurfaceGrid) -> np.ndarray:
    """L2-orthonormal basis of harmonic tangent fields, shape ``(2g, N, 2)``.

    Extracted as the numerical nullspace of the discretized 1-form Laplacian
    ``grad div - (n x) grad div (n x)``; raises :class:`RankDeficiencyError`
    if its dimension is not twice the genus.
    """
    if grid.genus == 0:
        return np.zeros((0, grid.n_nodes, 2))
    H = grid.calculus.harmonic_fields()
    if H.shape[0] != 2 * grid.genus:
        raise RankDeficiencyError(f"numerical nullspace has dimension {H.shape[0]}, "
                                  f"expected {2 * grid.genus}")
    G = np.array([[inner(grid, a, b) for b in H] for a in H]).real
    evals, evecs = np.linalg.eigh(G)
    T = evecs / np.sqrt(evals)  # Loewdin orthonormalization
    return np.einsum("ij,inc->jnc", T, H)


def torus_harmonic_pair(grid: SurfaceGrid) -> np.ndarray:
    """Analytic pair ``(R + r cos t)^-2 dx/ds`` and its rotation ``n x`` (torus grids)."""
    if not isinstance(grid.surface, Torus):
        raise ValueError("analytic harmonic pair is defined for the torus")
    rho = np.repeat(grid.rho, grid.nv)
    s = grid.surface.orientation  # dx/ds / rho = s * e2
    j1 = np.stack([np.zeros_like(rho), s / rho], axis=-1)
    return np.array([j1, rot90(grid, j1)])


@dataclass(frozen=True)
class HodgeParts:
    """``v = grad alpha + n x grad beta + harmonic``."""

    grad_part: np.ndarray
    rot_grad_part: np.ndarray
    harmonic_part: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    harmonic_coeffs: np.ndarray
    residual: float


def hodge_decompose(grid: SurfaceGrid, v, basis=None) -> HodgeParts:
    """Hodge-Helmholtz decomposition of a tangent field.

    ``basis`` defaults to :func:`harmonic_basis`; ``residual`` is the
    relative L2 norm of what none of the three parts captures.
    """
    v = grid.check_tangent(v)
    c = grid.calculus
    H = harmonic_basis(grid) if basis is None else np.asarray(basis)
    alpha = c.R0.apply(c.mean_projector.apply(c.div.apply(v)))
    beta = -c.R0.apply(c.mean_projector.apply(c.div.apply(rot90(grid, v))))
    gp = c.grad.apply(alpha)
    rp = rot90(grid, c.grad.apply(beta))
    rest = v - gp - rp
    coeffs = np.array([inner(grid, rest, h) for h in H])
    hp = np.einsum("i,inc->nc", coeffs, H) if len(H) else np.zeros_like(rest)
    nv = math.sqrt(max(inner(grid, v, v).real, 0.0))
    res = math.sqrt(max(inner(grid, rest - hp, rest - hp).real, 0.0)) / max(nv, 1e-300)
    return HodgeParts(gp, rp, hp, alpha, beta, coeffs, res)
