"""Nystrom discretization of Helmholtz layer potentials on surfaces of revolution.

Boundary operators are assembled row by row for the targets at azimuth zero
and stored as :class:`DiscretizedOperator` (block circulant, see
:mod:`debye_bie.circulant`).  Two singular quadratures are used:

* sphere: for each target a second Gauss-Legendre x trapezoid grid is laid
  out with its pole at the target.  The area element ``sin(a) da`` cancels the
  ``1/|x-y|`` singularity and the density is evaluated there through its
  spherical-harmonic expansion.  Tangent densities are interpolated through
  the Cartesian combinations ``j_x + i j_y``, ``j_x - i j_y`` and ``j_z``,
  which carry azimuthal spin ``+1, -1, 0`` and keep the operator block
  circulant.
* torus: the whole period cell of the parameter plane, centred on the
  target, is covered by one polar rule in metric-scaled coordinates and the
  density is evaluated at its nodes by trigonometric interpolation.  Since
  the cell covers the surface exactly once, no blending with the trapezoid
  rule is required.

Kernels with an odd ``1/|x-y|^2`` part (the principal-value operators) are
handled by the same polar rules: the angular trapezoid rule is symmetric under
``a -> a + pi`` and cancels that part exactly.

Conventions (outward normal ``n``, target ``x`` on the surface)::

    S r       = int g_k(x-y) r(y) dA_y
    K0 r      = p.v. int n(x).grad_x g_k(x-y) r(y) dA_y     n.grad S r |+- = -+ r/2 + K0 r
    K1 r      = n x grad_G (S r)
    K2n j     = n . S j                K2t j = n x S j
    K3 j      = n . curl S j = -div_G (n x S j)
    K4 j      = p.v. n x (curl S j)    n x curl S j |+- = +- j/2 + K4 j
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .circulant import BlockCirculant
from .specfun import legendre_columns
from .surface import Sphere, SurfaceGrid, _dirichlet_weights, interpolate, resample_periodic

__all__ = [
    "CoincidentPointError",
    "NearSurfaceError",
    "DiscretizedOperator",
    "LayerOperators",
    "PotentialSet",
    "QuadratureOptions",
    "kernel_gk",
    "build_single_layer",
    "build_double_layer",
    "build_vector_single_layer",
    "build_K0",
    "build_K1",
    "build_K2n",
    "build_K2t",
    "build_K3",
    "build_K4",
    "eval_EH_offsurface",
    "upsample",
]

_FOUR_PI = 4.0 * math.pi


class CoincidentPointError(ValueError):
    """Kernel evaluated at coincident source and target."""


class NearSurfaceError(ValueError):
    """Evaluation point too close to the surface for the smooth rule."""


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def kernel_gk(x, y, k):
    """Fundamental solution ``exp(ik|x-y|) / (4 pi |x-y|)``."""
    d = np.asarray(x, float) - np.asarray(y, float)
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0):
        raise CoincidentPointError("kernel_gk needs x != y")
    return np.exp(1j * k * r) / (_FOUR_PI * r)


def _green(d, k):
    """``g`` and ``G1`` with ``grad_x g = d * G1`` for separations ``d`` (``(..., 3)``)."""
    r = np.linalg.norm(d, axis=-1)
    e = np.exp(1j * k * r) / (_FOUR_PI * r)
    return e, e * (1j * k * r - 1.0) / r**2


def _k_scalar_single(x0, n0, fr0, y, ny, k):
    g, _ = _green(x0 - y, k)
    return g[:, None, None]


def _k_adjoint_double(x0, n0, fr0, y, ny, k):
    d = x0 - y
    _, G1 = _green(d, k)
    return ((d @ n0) * G1)[:, None, None]


def _k_double(x0, n0, fr0, y, ny, k):
    d = x0 - y
    _, G1 = _green(d, k)
    return (-(d * ny).sum(-1) * G1)[:, None, None]


def _k_vector_single(x0, n0, fr0, y, ny, k):
    """Output components along ``(e1, e2, n)`` at the target of ``g * j``."""
    g, _ = _green(x0 - y, k)
    axes = np.stack([fr0[0], fr0[1], n0])  # (3 out, 3 cart)
    return g[:, None, None] * axes[None]


def _k_nxcurl(x0, n0, fr0, y, ny, k):
    """``e_o . (n0 x (grad g x j)) = (e_o.grad g)(n0.j) - (n0.grad g)(e_o.j)``."""
    d = x0 - y
    _, G1 = _green(d, k)
    grad = d * G1[:, None]
    gn = grad @ n0
    out = np.empty((d.shape[0], 2, 3), dtype=complex)
    for o in range(2):
        out[:, o, :] = (grad @ fr0[o])[:, None] * n0[None, :] - gn[:, None] * fr0[o][None, :]
    return out


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


class DiscretizedOperator(BlockCirculant):
    """Block-circulant boundary operator tagged with its wavenumber and side.

    ``side`` is ``"+"``, ``"-"`` or ``"pv"`` (principal value / continuous).
    ``in_kind`` and ``out_kind`` are ``"scalar"``, ``"tangent"`` or
    ``"vector"`` (components along ``e1, e2, n``).
    """

    def __init__(self, modes, nu, cout, cin, k=0.0, side="pv", kind="", in_kind="scalar",
                 out_kind="scalar"):
        super().__init__(modes, nu, cout, cin)
        self.k = complex(k)
        self.side = side
        self.kind = kind
        self.in_kind = in_kind
        self.out_kind = out_kind

    @classmethod
    def wrap(cls, op: BlockCirculant, k, side, kind, in_kind, out_kind):
        return cls(op.modes, op.nu, op.cout, op.cin, k, side, kind, in_kind, out_kind)

    @property
    def matrix(self) -> np.ndarray:
        """Dense matrix in node-major ordering."""
        return self.dense()

    @property
    def dims(self) -> tuple[int, int]:
        n = self.nu * self.nv
        return n * self.cout, n * self.cin

    def header(self) -> dict:
        return {"format": "debye-bie-operator", "version": 1, "dims": list(self.dims),
                "k": [self.k.real, self.k.imag], "side": self.side, "kind": self.kind,
                "in_kind": self.in_kind, "out_kind": self.out_kind, "nu": self.nu,
                "nv": self.nv, "cout": self.cout, "cin": self.cin,
                "payload": "complex128 little-endian mode blocks (nv, nu*cout, nu*cin)"}

    def dump(self, path) -> None:
        """Binary dump: one JSON header line, then the raw mode blocks."""
        with open(path, "wb") as fh:
            fh.write((json.dumps(self.header()) + "\n").encode())
            fh.write(np.ascontiguousarray(self.modes, dtype="<c16").tobytes())

    @classmethod
    def load(cls, path) -> "DiscretizedOperator":
        with open(path, "rb") as fh:
            h = json.loads(fh.readline().decode())
            if h.get("format") != "debye-bie-operator":
                raise ValueError(f"{path} is not an operator dump")
            data = np.frombuffer(fh.read(), dtype="<c16")
        modes = data.reshape(h["nv"], h["nu"] * h["cout"], h["nu"] * h["cin"])
        return cls(modes.astype(complex), h["nu"], h["cout"], h["cin"], complex(*h["k"]),
                   h["side"], h["kind"], h["in_kind"], h["out_kind"])


@dataclass(frozen=True)
class QuadratureOptions:
    """Resolution of the singular rules.

    ``polar_radial`` and ``polar_angular`` set the node counts of the polar
    rules (radial nodes, and angular nodes per panel on the torus).  ``None``
    picks a default that grows with the grid.
    """

    polar_radial: Optional[int] = None
    polar_angular: Optional[int] = None


# -- sphere ----------------------------------------------------------------


def _sphere_rows(grid: SurfaceGrid, k, specs, opts):
    a = grid.surface.radius
    nt, nv = grid.nu, grid.nv
    lmax = nt - 1
    na = opts.polar_radial or nt + 16
    nb = opts.polar_angular or 2 * na
    nb += nb % 2
    xa, wa = np.polynomial.legendre.leggauss(na)
    alpha = 0.5 * np.pi * (xa + 1.0)
    walpha = 0.5 * np.pi * wa * np.sin(alpha)
    beta = 2 * np.pi * np.arange(nb) / nb
    Al, Be = np.meshgrid(alpha, beta, indexing="ij")
    local = np.stack([np.sin(Al) * np.cos(Be), np.sin(Al) * np.sin(Be), np.cos(Al)], -1).reshape(-1, 3)
    Wloc = (np.repeat(walpha, nb) * (2 * np.pi / nb)) * a**2

    # grid Legendre tables and analysis weights on the unit sphere
    leg_grid = {m: P for m, P, _, _ in legendre_columns(lmax, grid.u)}
    wunit = grid.profile_weights / a**2
    ct, st = np.cos(grid.u), np.sin(grid.u)
    # spin channels: (shift, coefficients of the input frame components at the source)
    vec_channels = [(1, np.stack([ct, 1j * np.ones(nt)], -1)),
                    (-1, np.stack([ct, -1j * np.ones(nt)], -1)),
                    (0, np.stack([-st, np.zeros(nt)], -1))]
    scal_channels = [(0, np.ones((nt, 1)))]
    chans = [vec_channels if vec else scal_channels for _, _, vec in specs]
    ms = np.rint(np.fft.fftfreq(nv) * nv).astype(int)
    needed = {}
    for si, chs in enumerate(chans):
        for ch, (sh, _) in enumerate(chs):
            for M in ms:
                m = int(M) + sh
                if abs(m) <= lmax:
                    needed.setdefault(abs(m), []).append((si, ch, m))
    modes = [np.zeros((nv, nt, cout, nt, 2 if vec else 1), dtype=complex) for _, cout, vec in specs]
    for i, th0 in enumerate(grid.u):
        c0, s0 = math.cos(th0), math.sin(th0)
        rot = np.array([[c0, 0.0, s0], [0.0, 1.0, 0.0], [-s0, 0.0, c0]])
        yu = local @ rot.T
        y = a * yu
        x0 = grid.points[i * nv]
        n0 = grid.normals[i * nv]
        fr0 = np.stack([grid.e1[i * nv], grid.e2[i * nv]])
        Kch = []
        for kernel, _, vec in specs:
            K = kernel(x0, n0, fr0, y, yu, k) * Wloc[:, None, None]  # (P, cout, ncart)
            if vec:
                Kch.append([(K[:, :, 0] - 1j * K[:, :, 1]) / 2, (K[:, :, 0] + 1j * K[:, :, 1]) / 2,
                            K[:, :, 2]])
            else:
                Kch.append([K[:, :, 0]])
        thp = np.arccos(np.clip(yu[:, 2], -1.0, 1.0))
        php = np.arctan2(yu[:, 1], yu[:, 0])
        # vs[(spec, channel, m)] : (nl, cout) = sum_p K P_l^|m|(th_p) e^{i m ph_p}
        vs = {}
        for am, P, _, _ in legendre_columns(lmax, thp):
            for si, ch, m in needed.get(am, []):
                vs[si, ch, m] = P @ (Kch[si][ch] * np.exp(1j * m * php)[:, None])
        for si, chs in enumerate(chans):
            for idx, M in enumerate(ms):
                for ch, (sh, coef) in enumerate(chs):
                    m = int(M) + sh
                    if abs(m) > lmax:
                        continue
                    h = vs[si, ch, m].T @ leg_grid[abs(m)]  # (cout, nt)
                    modes[si][idx, i] += (nv * h * wunit[None, :])[:, :, None] * coef[None, :, :]
    out = []
    for mo, (_, cout, vec) in zip(modes, specs):
        cin = 2 if vec else 1
        out.append(BlockCirculant(mo.reshape(nv, nt * cout, nt * cin), nt, cout, cin))
    return out


# -- periodic chart (torus) --------------------------------------------------


def _cell_polar_rule(a, b, nr, nb):
    """Polar rule on the rectangle ``[-a, a] x [-b, b]`` centred at the origin.

    The angle is split at the corner directions into four panels with
    Gauss-Legendre nodes; panel ``p + 2`` mirrors panel ``p`` through the
    origin so that odd ``1/rho`` terms cancel pairwise.  Returns offsets
    ``(xi, zeta)`` and weights for ``dxi dzeta``.
    """
    bc = math.atan2(b, a)
    xs, ws = np.polynomial.legendre.leggauss(nr)
    s = 0.5 * (xs + 1.0)
    ws = 0.5 * ws
    xb, wb = np.polynomial.legendre.leggauss(nb)
    betas, wbeta = [], []
    for lo, hi in ((-bc, bc), (bc, math.pi - bc)):
        betas.append(lo + 0.5 * (hi - lo) * (xb + 1.0))
        wbeta.append(0.5 * (hi - lo) * wb)
    beta = np.concatenate(betas)
    wbeta = np.concatenate(wbeta)
    beta = np.concatenate([beta, beta + math.pi])
    wbeta = np.concatenate([wbeta, wbeta])
    c, sn = np.cos(beta), np.sin(beta)
    with np.errstate(divide="ignore"):
        rmax = np.minimum(a / np.abs(c), b / np.abs(sn))
    rho = np.outer(rmax, s)  # (nbeta, nr)
    w = np.outer(wbeta * rmax**2, ws * s)
    return (rho * c[:, None]).ravel(), (rho * sn[:, None]).ravel(), w.ravel()


def _periodic_rows(grid: SurfaceGrid, k, specs, opts):
    """Rows for a doubly periodic chart (torus).

    Each target sits at the centre of one full period cell of the parameter
    plane.  The cell is integrated with a polar rule in metric-scaled
    coordinates ``(|x_u| du, |x_v| dv)`` of the target, and the density is
    evaluated at the polar nodes by trigonometric interpolation.  No
    blending with the trapezoid rule is needed.
    """
    surf = grid.surface
    nu, nv = grid.nu, grid.nv
    nr = opts.polar_radial or nu + 16
    nb = opts.polar_angular or nu // 2 + 8
    rows = [np.zeros((nu, cout, 2 if vec else 1, nu, nv), dtype=complex) for _, cout, vec in specs]
    for i, u0 in enumerate(grid.u):
        x0 = grid.points[i * nv]
        n0 = grid.normals[i * nv]
        fr0 = np.stack([grid.e1[i * nv], grid.e2[i * nv]])
        h0, r0 = grid.hu[i], grid.rho[i]
        xi, ze, w = _cell_polar_rule(np.pi * h0, np.pi * r0, nr, nb)
        up, vp = u0 + xi / h0, ze / r0
        yp, nyp, e1p, e2p, hup, rhop = surf.frame(up, vp)
        wp = w * hup * rhop / (h0 * r0)
        Iu = _dirichlet_weights(up[:, None] - grid.u[None, :], nu)  # (P, nu)
        Iv = _dirichlet_weights(vp[:, None] - grid.v[None, :], nv)  # (P, nv)
        for (kernel, cout, vec), R in zip(specs, rows):
            Kp = kernel(x0, n0, fr0, yp, nyp, k) * wp[:, None, None]
            if vec:
                Kp = np.einsum("poc,pjc->poj", Kp, np.stack([e1p, e2p], axis=1))
            for o in range(cout):
                for j in range(Kp.shape[2]):
                    kc = Kp[:, o, j]
                    R[i, o, j] = ((Iu * kc.real[:, None]).T @ Iv
                                  + 1j * ((Iu * kc.imag[:, None]).T @ Iv))
    out = []
    for R, (_, cout, vec) in zip(rows, specs):
        cin = 2 if vec else 1
        out.append(BlockCirculant.from_rows(R.transpose(0, 1, 3, 4, 2), nu, cout, cin))
    return out


def _assemble_many(grid, k, specs, opts=None):
    """Assemble several kernels ``(kernel, cout, vector_input)`` in one sweep over targets."""
    opts = opts or QuadratureOptions()
    resolution_warning(grid, k)
    if isinstance(grid.surface, Sphere):
        return _sphere_rows(grid, k, specs, opts)
    return _periodic_rows(grid, k, specs, opts)


def _assemble(grid, k, kernel, cout, vector_input, opts):
    return _assemble_many(grid, k, [(kernel, cout, vector_input)], opts)[0]


def _check_side(side):
    if side not in ("+", "-", "pv"):
        raise ValueError("side must be '+', '-' or 'pv'")
    return side


def build_single_layer(grid: SurfaceGrid, k, opts: QuadratureOptions | None = None) -> DiscretizedOperator:
    """On-surface single layer ``S`` (``G_k``; ``k = 0`` gives ``G_0``)."""
    op = _assemble(grid, k, _k_scalar_single, 1, False, opts)
    return DiscretizedOperator.wrap(op, k, "pv", "S", "scalar", "scalar")


def build_double_layer(grid: SurfaceGrid, k, opts: QuadratureOptions | None = None) -> DiscretizedOperator:
    """Principal-value double layer ``D r = int n(y).grad_y g(x-y) r(y) dA_y``."""
    op = _assemble(grid, k, _k_double, 1, False, opts)
    return DiscretizedOperator.wrap(op, k, "pv", "D", "scalar", "scalar")


def build_vector_single_layer(grid: SurfaceGrid, k, opts: QuadratureOptions | None = None) -> DiscretizedOperator:
    """``S j`` for tangent ``j``; output components along ``(e1, e2, n)``."""
    op = _assemble(grid, k, _k_vector_single, 3, True, opts)
    return DiscretizedOperator.wrap(op, k, "pv", "SV", "tangent", "vector")


def _identity(grid, c=1):
    return BlockCirculant.identity(grid.nu, grid.nv, c)


def build_K0(grid: SurfaceGrid, k, side="pv", opts: QuadratureOptions | None = None) -> DiscretizedOperator:
    """``K0``; with ``side = '+'/'-'`` the limit ``n.grad S |+-  = -+ I/2 + K0``."""
    _check_side(side)
    op = _assemble(grid, k, _k_adjoint_double, 1, False, opts)
    if side != "pv":
        op = op + (-0.5 if side == "+" else 0.5) * _identity(grid)
    return DiscretizedOperator.wrap(op, k, side, "K0", "scalar", "scalar")


def build_K1(grid: SurfaceGrid, k, side="pv", opts: QuadratureOptions | None = None,
             S: BlockCirculant | None = None) -> DiscretizedOperator:
    """``K1 r = n x grad_G (S r)`` (continuous across the surface)."""
    _check_side(side)
    S = build_single_layer(grid, k, opts) if S is None else S
    c = grid.calculus
    return DiscretizedOperator.wrap(c.rot @ c.grad @ S, k, side, "K1", "scalar", "tangent")


def _sv_tangential(SV):
    return SV.sub([0, 1], [0, 1])


def build_K2n(grid: SurfaceGrid, k, side="pv", opts: QuadratureOptions | None = None,
              SV: BlockCirculant | None = None) -> DiscretizedOperator:
    """``K2n j = n . S j``."""
    _check_side(side)
    SV = build_vector_single_layer(grid, k, opts) if SV is None else SV
    return DiscretizedOperator.wrap(SV.sub([2], [0, 1]), k, side, "K2n", "tangent", "scalar")


def build_K2t(grid: SurfaceGrid, k, side="pv", opts: QuadratureOptions | None = None,
              SV: BlockCirculant | None = None) -> DiscretizedOperator:
    """``K2t j = n x S j`` (frame components)."""
    _check_side(side)
    SV = build_vector_single_layer(grid, k, opts) if SV is None else SV
    op = grid.calculus.rot @ _sv_tangential(SV)
    return DiscretizedOperator.wrap(op, k, side, "K2t", "tangent", "tangent")


def build_K3(grid: SurfaceGrid, k, side="pv", opts: QuadratureOptions | None = None,
             SV: BlockCirculant | None = None) -> DiscretizedOperator:
    """``K3 j = n . curl S j = -div_G(n x S j)``; its range is mean zero."""
    _check_side(side)
    SV = build_vector_single_layer(grid, k, opts) if SV is None else SV
    c = grid.calculus
    op = -(c.div @ c.rot @ _sv_tangential(SV))
    return DiscretizedOperator.wrap(op, k, side, "K3", "tangent", "scalar")


def build_K4(grid: SurfaceGrid, k, side="pv", opts: QuadratureOptions | None = None) -> DiscretizedOperator:
    """``K4``; with ``side = '+'/'-'`` the limit ``n x curl S j |+- = +- I/2 + K4``."""
    _check_side(side)
    op = _assemble(grid, k, _k_nxcurl, 2, True, opts)
    if side != "pv":
        op = op + (0.5 if side == "+" else -0.5) * _identity(grid, 2)
    return DiscretizedOperator.wrap(op, k, side, "K4", "tangent", "tangent")


class LayerOperators:
    """All boundary operators of one grid and wavenumber, from a single sweep.

    ``S``, ``SV``, ``K0`` and ``K4`` (principal value) are assembled
    together; ``K1``, ``K2n``, ``K2t`` and ``K3`` are derived from them on
    first use.
    """

    def __init__(self, grid: SurfaceGrid, k, opts: QuadratureOptions | None = None):
        self.grid, self.k = grid, complex(k)
        S, SV, K0, K4 = _assemble_many(grid, k, [(_k_scalar_single, 1, False),
                                                 (_k_vector_single, 3, True),
                                                 (_k_adjoint_double, 1, False),
                                                 (_k_nxcurl, 2, True)], opts)
        w = DiscretizedOperator.wrap
        self.S = w(S, k, "pv", "S", "scalar", "scalar")
        self.SV = w(SV, k, "pv", "SV", "tangent", "vector")
        self.K0 = w(K0, k, "pv", "K0", "scalar", "scalar")
        self.K4 = w(K4, k, "pv", "K4", "tangent", "tangent")
        self._derived = {}

    def _get(self, name, fn):
        if name not in self._derived:
            self._derived[name] = fn(self.grid, self.k)
        return self._derived[name]

    @property
    def K1(self) -> DiscretizedOperator:
        return self._get("K1", lambda g, k: build_K1(g, k, S=self.S))

    @property
    def K2n(self) -> DiscretizedOperator:
        return self._get("K2n", lambda g, k: build_K2n(g, k, SV=self.SV))

    @property
    def K2t(self) -> DiscretizedOperator:
        return self._get("K2t", lambda g, k: build_K2t(g, k, SV=self.SV))

    @property
    def K3(self) -> DiscretizedOperator:
        return self._get("K3", lambda g, k: build_K3(g, k, SV=self.SV))


# ---------------------------------------------------------------------------
# off-surface evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialSet:
    """Densities generating ``A = S j``, ``A_m = S m``, ``phi = S r``, ``phi_m = S q``."""

    grid: SurfaceGrid
    k: complex
    r: np.ndarray
    q: np.ndarray
    j: np.ndarray
    m: np.ndarray

    @classmethod
    def zeros(cls, grid, k):
        n = grid.n_nodes
        return cls(grid, k, np.zeros(n, complex), np.zeros(n, complex),
                   np.zeros((n, 2), complex), np.zeros((n, 2), complex))


def upsample(sources: PotentialSet, factor) -> PotentialSet:
    """Interpolate all densities onto a finer grid of the same surface.

    ``factor`` is an integer or a pair ``(fu, fv)`` multiplying the profile
    and azimuthal resolutions.
    """
    from .surface import sphere_grid, torus_grid

    fu, fv = (factor, factor) if np.isscalar(factor) else factor
    g = sources.grid
    if fu == 1 and fv == 1:
        return sources
    if isinstance(g.surface, Sphere):
        fine = sphere_grid(g.nu * fu, g.nv * fv, g.surface.radius)
    else:
        fine = torus_grid(g.surface.R, g.surface.r, g.nu * fu, g.nv * fv)
        rs = lambda f: resample_periodic(g, f, fine.nu, fine.nv)
        return PotentialSet(fine, sources.k, rs(sources.r), rs(sources.q), rs(sources.j), rs(sources.m))
    u, v = fine.uv[:, 0], fine.uv[:, 1]
    return PotentialSet(fine, sources.k, interpolate(g, sources.r, u, v), interpolate(g, sources.q, u, v),
                        interpolate(g, sources.j, u, v), interpolate(g, sources.m, u, v))


def eval_EH_offsurface(sources: PotentialSet, x, upsample_factor: int = 1,
                       cutoff: float | None = None, chunk: int | None = None):
    """Fields ``E = ikA - grad phi - curl A_m`` and ``H = curl A + ik A_m - grad phi_m``.

    Plain (smooth) quadrature on the grid, optionally after interpolating the
    densities onto a ``upsample_factor`` times finer grid.  Points closer to
    the surface than ``cutoff`` (default a quarter of the node spacing of the
    integration grid) raise :class:`NearSurfaceError`; plain quadrature is
    accurate only a few node spacings away, so callers needing more digits
    closer in should upsample.  ``chunk`` targets are
    processed at a time (default: about four million target-source pairs).
    """
    src = upsample(sources, upsample_factor)
    g = src.grid
    k = src.k
    x = np.atleast_2d(np.asarray(x, float))
    h = g.max_spacing()
    cutoff = 0.25 * h if cutoff is None else cutoff
    if chunk is None:
        chunk = max(1, 4_000_000 // g.n_nodes)
    w = g.weights[:, None]
    # columns: j (3), m (3), r, q, all times the quadrature weights
    D = np.concatenate([g.to_cartesian(src.j) * w, g.to_cartesian(src.m) * w,
                        (src.r * g.weights)[:, None], (src.q * g.weights)[:, None]], axis=1)
    E = np.zeros(x.shape, dtype=complex)
    H = np.zeros(x.shape, dtype=complex)
    cyc = ((0, 1, 2), (1, 2, 0), (2, 0, 1))
    for s in range(0, x.shape[0], chunk):
        xs = x[s:s + chunk]
        d = xs[:, None, :] - g.points[None, :, :]  # (T, N, 3)
        dmin = g.surface.distance(xs)
        if np.any(dmin < cutoff):
            bad = float(dmin.min())
            raise NearSurfaceError(f"evaluation point at distance {bad:.3e} from the surface "
                                   f"(cutoff {cutoff:.3e})")
        gk, G1 = _green(d, k)
        M0 = gk @ D[:, :6]  # A, A_m
        M = (G1[None] * d.transpose(2, 0, 1)) @ D  # M[b, t, c] = sum_n G1 d_b D_c
        A, Am = M0[:, 0:3], M0[:, 3:6]
        grad_phi, grad_phim = M[:, :, 6].T, M[:, :, 7].T
        curlA = np.stack([M[b, :, c] - M[c, :, b] for _, b, c in cyc], axis=-1)
        curlAm = np.stack([M[b, :, 3 + c] - M[c, :, 3 + b] for _, b, c in cyc], axis=-1)
        E[s:s + chunk] = 1j * k * A - grad_phi - curlAm
        H[s:s + chunk] = curlA + 1j * k * Am - grad_phim
    return E, H


def resolution_warning(grid: SurfaceGrid, k) -> None:
    """Warn when the grid has fewer than ~6 nodes per wavelength."""
    h = grid.max_spacing()
    if abs(k) * h > 2 * np.pi / 6:
        warnings.warn(f"grid spacing {h:.3g} coarse for k = {k}: quadrature error may exceed 1e-6",
                      RuntimeWarning, stacklevel=2)
