"""Integral-equation solvers built on the generalized Debye-source representation.

Given Debye sources ``r, q`` (mean zero) and, on surfaces of genus ``g > 0``,
harmonic coefficients ``c`` (``j_H = sum c_l b_l`` over an orthonormal
harmonic basis), the currents are

    j = ik grad R0 r - ik n x grad R0 q + j_H,        m = n x j,

and the fields ``E = ikA - grad phi - curl A_m``, ``H = curl A + ik A_m -
grad phi_m`` with ``A = S j``, ``A_m = S m``, ``phi = S r``, ``phi_m = S q``.
With ``s = +1`` on the exterior side and ``s = -1`` on the interior side the
traces are

    n.E   =  s r/2 - K0 r + ik K2n j - K3 m
    n.H   =  s q/2 - K0 q + K3 j + ik K2n m
    n x E = -s m/2 - K1 r + ik K2t j - K4 m
    n x H =  s j/2 - K1 q + K4 j + ik K2t m

so that ``n.(E+ - E-) = r``, ``n.(H+ - H-) = q``, ``n x (E+ - E-) = -m`` and
``n x (H+ - H-) = j``.  Tangential traces are stored in frame components.

All operators are block circulant (surfaces of revolution), so every solve
is done mode by mode.  The azimuthal mode 0 carries the mean-zero
constraints on ``r`` and ``q`` (bordered with constant columns whose
multipliers vanish for consistent data) and, for ``g > 0``, the harmonic
unknowns together with the harmonic projections of the tangential trace.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .circulant import BlockCirculant
from .layerpot import (LayerOperators, PotentialSet, QuadratureOptions, build_single_layer,
                       eval_EH_offsurface)
from .surface import (MeanZeroError, Sphere, SurfaceGrid, _require_mean_zero, harmonic_basis,
                      inner, interpolate, rot90)

__all__ = [
    "SolverError",
    "ConditioningError",
    "TopologyError",
    "COND_LIMIT",
    "DebyeSources",
    "Traces",
    "ScatterSolution",
    "KNeumannField",
    "LowFrequencyReport",
    "BoundarySystem",
    "IncidentTraces",
    "assemble_N",
    "assemble_T",
    "assemble_hybrid_Q",
    "solve_normal_bvp",
    "solve_static",
    "solve_pec",
    "build_k_neumann",
    "decouple_k_neumann",
    "solve_harmonic_tangential",
    "point_dipole",
    "circulation",
    "surface_circulation",
    "torus_cycle",
    "silver_muller_residual",
    "low_frequency_limit_check",
    "random_bandlimited",
    "jump_relation_test",
    "JumpReport",
    "harmonic_response_matrix",
]

#: condition number above which a solve is refused (proximity to an exceptional wavenumber)
COND_LIMIT = 1e12


class SolverError(RuntimeError):
    """Base class of solver failures."""


class ConditioningError(SolverError):
    """The system is numerically singular (condition estimate above :data:`COND_LIMIT`)."""

    def __init__(self, message, condition):
        super().__init__(message)
        self.condition = condition


class TopologyError(SolverError):
    """The harmonic correction of a genus > 0 solve failed."""


def _side_sign(side) -> int:
    if side in ("+", 1, "exterior"):
        return 1
    if side in ("-", -1, "interior"):
        return -1
    raise ValueError("side must be '+' or '-'")


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DebyeSources:
    """Debye sources on a grid, plus harmonic coefficients when ``genus > 0``."""

    grid: SurfaceGrid
    k: complex
    r: np.ndarray
    q: np.ndarray
    harmonic: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    basis: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.grid.check_scalar(self.r, "r")
        self.grid.check_scalar(self.q, "q")
        c = np.atleast_1d(np.asarray(self.harmonic, dtype=complex))
        object.__setattr__(self, "harmonic", c)
        if c.size and (self.basis is None or self.basis.shape[0] != c.size):
            raise ValueError("harmonic coefficients need a matching basis")

    @property
    def j_H(self) -> np.ndarray:
        if self.harmonic.size == 0:
            return np.zeros((self.grid.n_nodes, 2), dtype=complex)
        return np.tensordot(self.harmonic, self.basis, axes=1)

    @cached_property
    def currents(self) -> tuple[np.ndarray, np.ndarray]:
        """``(j, m)`` in frame components."""
        c = self.grid.calculus
        k = self.k
        psi = c.R0.apply(self.r)
        psim = c.R0.apply(self.q)
        j = 1j * k * (c.grad.apply(psi) - rot90(self.grid, c.grad.apply(psim))) + self.j_H
        return j, rot90(self.grid, j)

    @property
    def j(self):
        return self.currents[0]

    @property
    def m(self):
        return self.currents[1]

    def potentials(self) -> PotentialSet:
        j, m = self.currents
        return PotentialSet(self.grid, self.k, np.asarray(self.r, complex), np.asarray(self.q, complex), j, m)

    def fields(self, x, upsample_factor=1):
        """``(E, H)`` at points off the surface."""
        return eval_EH_offsurface(self.potentials(), x, upsample_factor=upsample_factor)

    def norm(self) -> float:
        g = self.grid
        val = inner(g, self.r, self.r).real + inner(g, self.q, self.q).real
        return math.sqrt(val + float(np.sum(np.abs(self.harmonic) ** 2)))


@dataclass(frozen=True)
class Traces:
    """One-sided traces: ``nE``, ``nH`` scalars; ``tE = n x E``, ``tH = n x H`` (frame components)."""

    nE: np.ndarray
    nH: np.ndarray
    tE: np.ndarray
    tH: np.ndarray

    def E_tangential(self, grid) -> np.ndarray:
        """``E_t = -n x (n x E)`` in frame components."""
        return -rot90(grid, self.tE)


@dataclass(frozen=True)
class IncidentTraces:
    """Incident data given directly on the grid: ``E_t`` (frame components) and ``n.H``."""

    E_t: np.ndarray
    nH: np.ndarray


@dataclass
class ScatterSolution:
    sources: DebyeSources
    k: complex
    incident: object
    residuals: dict
    condition: float
    timings: dict
    system: "BoundarySystem" = field(repr=False, default=None)

    def record(self) -> dict:
        """JSON-ready summary."""
        g = self.sources.grid
        return {"k": [self.k.real, self.k.imag], "surface": g.describe()["shape"],
                "resolution": [g.nu, g.nv], "residuals": self.residuals,
                "condition_estimate": self.condition, "timings": self.timings}


@dataclass
class KNeumannField:
    sources: DebyeSources
    k: complex
    normal_residual: float
    system_residual: float
    traces: Traces = field(repr=False, default=None)

    def fields(self, x, upsample_factor=1):
        return self.sources.fields(x, upsample_factor)


# ---------------------------------------------------------------------------
# modal linear algebra
# ---------------------------------------------------------------------------


def _fft_modes(field, grid):
    """Unnormalized azimuthal FFT, shape ``(nv, nu * c)``."""
    f = np.asarray(field)
    c = 1 if f.ndim == 1 else f.shape[1]
    fs = f.reshape(grid.nu, grid.nv, c).transpose(1, 0, 2).reshape(grid.nv, -1)
    return np.fft.fft(fs, axis=0)


def _ifft_modes(modes, grid, c):
    x = np.fft.ifft(modes, axis=0).reshape(grid.nv, grid.nu, c).transpose(1, 0, 2).reshape(-1, c)
    return x[:, 0] if c == 1 else x


@dataclass
class _Extra:
    """Mode-0 extension: unknown coefficients with their columns and extra equations."""

    cols: np.ndarray  # (h, nu*cout): mode-0 image of each extra unknown
    rows: np.ndarray  # (h, nu*cin): functional on the mode-0 unknown
    rows_c: np.ndarray  # (h, h): functional on the extra unknowns


def _mode_bases(grid: SurfaceGrid):
    """Per-mode ``(synthesis, analysis)`` matrices of the resolved scalar subspace.

    On the Gauss-Legendre sphere grid mode ``m`` resolves only the degrees
    ``|m| <= l <= lmax``; node values outside that span are invisible to the
    spectral calculus and would make the hybrid system singular, so the
    solves are restricted to it.  Periodic grids drop the Nyquist
    components, which the Nyquist-free calculus and interpolation ignore.
    """
    calc = grid.calculus
    out = []
    if not isinstance(grid.surface, Sphere):
        Z = calc.nyquist_free_basis()
        for idx in range(grid.nv):
            if 2 * idx == grid.nv:
                out.append((np.zeros((grid.nu, 0)), np.zeros((0, grid.nu))))
            else:
                out.append((Z, Z.T))
        return out
    for idx in range(grid.nv):
        m = idx if idx <= grid.nv // 2 else idx - grid.nv
        p = calc._parts(m)
        if p is None:
            out.append((np.zeros((grid.nu, 0)), np.zeros((0, grid.nu))))
        else:
            P, _, _, W, _ = p
            out.append((P.T, P * W))
    return out


class _ModalSystem:
    """Square block-circulant system with mean-zero bordering in mode 0.

    Every mode block is restricted to the resolved subspace of the grid.
    """

    def __init__(self, op: BlockCirculant, grid: SurfaceGrid, mean_channels, extra: _Extra | None = None):
        if op.cout != op.cin:
            raise ValueError("modal system needs a square operator")
        self.op, self.grid = op, grid
        self.c = c = op.cin
        nu = grid.nu
        bases = _mode_bases(grid)
        eye = np.eye(c)
        if bases is None:
            self.syn = self.ana = None
            blocks = list(op.modes)
        else:
            self.syn = [np.kron(s, eye) for s, _ in bases]
            self.ana = [np.kron(a, eye) for _, a in bases]
            blocks = [a @ A @ s for a, A, s in zip(self.ana, op.modes, self.syn)]
        self.mean_channels = list(mean_channels)
        self.extra = extra
        A0 = blocks[0]
        scale = max(np.linalg.norm(A0, 2), 1e-300)
        nm = len(self.mean_channels)
        h = 0 if extra is None else extra.cols.shape[0]
        n = A0.shape[0]
        M = np.zeros((n + nm + h, n + nm + h), dtype=complex)
        M[:n, :n] = A0
        pw = grid.profile_weights
        for i, ch in enumerate(self.mean_channels):
            col = np.zeros(nu * c)
            col[ch::c] = 1.0 / math.sqrt(nu)
            row = np.zeros(nu * c)
            row[ch::c] = pw / np.linalg.norm(pw)
            M[:n, n + i] = scale * self._reduce_out(0, col)
            M[n + i, :n] = scale * self._reduce_in_row(0, row)
        if h:
            M[:n, n + nm:] = np.array([self._reduce_out(0, col) for col in extra.cols]).T
            M[n + nm:, :n] = np.array([self._reduce_in_row(0, row) for row in extra.rows])
            M[n + nm:, n + nm:] = extra.rows_c
        blocks[0] = M
        self.blocks = blocks
        self._border_scale = scale
        self.n, self.nm, self.h = n, nm, h

    def _reduce_out(self, idx, y):
        return y if self.ana is None else self.ana[idx] @ y

    def _reduce_in_row(self, idx, row):
        return row if self.syn is None else row @ self.syn[idx]

    @cached_property
    def condition(self) -> float:
        smax, smin = 0.0, np.inf
        for B in self.blocks:
            if B.size:
                s = np.linalg.svd(B, compute_uv=False)
                smax, smin = max(smax, s[0]), min(smin, s[-1])
        return float(smax / smin) if smin > 0 else float("inf")

    def _solve_blocks(self, rhs):
        return [np.linalg.solve(B, b) if B.size else b for B, b in zip(self.blocks, rhs)]

    def solve(self, rhs, extra_rhs=None, refine: int = 1):
        """Return ``(x, extra_unknowns, multipliers, relative_residual)``."""
        Bh = _fft_modes(rhs, self.grid)
        b = [self._reduce_out(i, Bh[i]) for i in range(self.grid.nv)]
        b[0] = np.concatenate([b[0], np.zeros(self.nm, complex),
                               np.zeros(self.h, complex) if extra_rhs is None
                               else np.asarray(extra_rhs, complex)])
        y = self._solve_blocks(b)
        for _ in range(refine):
            r = [bi - Bk @ yi for bi, Bk, yi in zip(b, self.blocks, y)]
            y = [yi + di for yi, di in zip(y, self._solve_blocks(r))]
        num = math.sqrt(sum(np.sum(np.abs(bi - Bk @ yi) ** 2) for bi, Bk, yi in zip(b, self.blocks, y)))
        den = math.sqrt(sum(np.sum(np.abs(bi) ** 2) for bi in b))
        res = num / den if den > 0 else num
        X = np.empty((self.grid.nv, self.grid.nu * self.c), dtype=complex)
        for i, yi in enumerate(y):
            yi = yi[: self.n] if i == 0 else yi
            X[i] = yi if self.syn is None else self.syn[i] @ yi
        x = _ifft_modes(X, self.grid, self.c)
        y0 = y[0]
        lam = y0[self.n: self.n + self.nm] * self._border_scale
        return x, y0[self.n + self.nm:], lam, float(res)



# ---------------------------------------------------------------------------
# operators of the formulation
# ---------------------------------------------------------------------------


class BoundarySystem:
    """Trace operators, normal system ``N``, tangential system ``T`` and hybrid ``Q``.

    Operators act on the stacked channels ``(r, q)``; the trace operators
    (before the current lift) act on ``(r, q, j1, j2, m1, m2)``.
    """

    def __init__(self, grid: SurfaceGrid, k, opts: QuadratureOptions | None = None,
                 layer: LayerOperators | None = None):
        self.grid = grid
        self.k = complex(k)
        self.opts = opts
        self.layer = layer if layer is not None else LayerOperators(grid, k, opts)
        self.calc = grid.calculus
        self._cache: dict = {}

    # -- building blocks ---------------------------------------------------

    @cached_property
    def basis(self) -> np.ndarray:
        """Orthonormal harmonic tangent fields, shape ``(2g, N, 2)``."""
        if self.grid.genus == 0:
            return np.zeros((0, self.grid.n_nodes, 2))
        return harmonic_basis(self.grid)

    @cached_property
    def G0(self) -> BlockCirculant:
        return build_single_layer(self.grid, 0.0, self.opts)

    def _I(self, c=1):
        return BlockCirculant.identity(self.grid.nu, self.grid.nv, c)

    @cached_property
    def lift(self) -> BlockCirculant:
        """``(r, q) -> (r, q, j, m)`` with ``j = j_R(r, q)``, ``m = n x j``."""
        c, k = self.calc, self.k
        GR = c.grad @ c.R0
        rGR = c.rot @ GR
        return BlockCirculant.block([[self._I(), None], [None, self._I()],
                                     [1j * k * GR, -1j * k * rGR],
                                     [1j * k * rGR, 1j * k * GR]])

    def trace_normal(self, side) -> BlockCirculant:
        s, L, k = _side_sign(side), self.layer, self.k
        a = 0.5 * s * self._I() - L.K0
        return BlockCirculant.block([[a, None, 1j * k * L.K2n, -L.K3],
                                     [None, a, L.K3, 1j * k * L.K2n]])

    def trace_tangential(self, side) -> BlockCirculant:
        s, L, k = _side_sign(side), self.layer, self.k
        I2 = self._I(2)
        return BlockCirculant.block([[-L.K1, None, 1j * k * L.K2t, -0.5 * s * I2 - L.K4],
                                     [None, -L.K1, 0.5 * s * I2 + L.K4, 1j * k * L.K2t]])

    # -- systems -----------------------------------------------------------

    def N(self, side="+") -> BlockCirculant:
        return self.trace_normal(side) @ self.lift

    def T(self, side="+") -> BlockCirculant:
        return self.trace_tangential(side) @ self.lift

    def _hybrid_row(self, tE_op: BlockCirculant) -> BlockCirculant:
        """``G0 div (n x (n x E))`` from an operator producing ``n x E``."""
        c = self.calc
        return self.G0 @ c.div @ c.rot @ tE_op

    def Q(self, side="+") -> BlockCirculant:
        T = self.T(side)
        row1 = self._hybrid_row(T.sub([0, 1], [0, 1]))
        row2 = self.N(side).sub([1], [0, 1])
        return BlockCirculant.block([[row1], [row2]])

    # -- evaluation --------------------------------------------------------

    def _six(self, sources: DebyeSources) -> np.ndarray:
        j, m = sources.currents
        return np.concatenate([np.asarray(sources.r, complex)[:, None],
                               np.asarray(sources.q, complex)[:, None], j, m], axis=1)

    def traces(self, sources: DebyeSources, side="+") -> Traces:
        x = self._six(sources)
        n = self.trace_normal(side).apply(x)
        t = self.trace_tangential(side).apply(x)
        return Traces(n[:, 0], n[:, 1], t[:, 0:2], t[:, 2:4])

    def _harmonic_six(self, b) -> np.ndarray:
        z = np.zeros(self.grid.n_nodes, complex)
        return np.concatenate([z[:, None], z[:, None], b, rot90(self.grid, b)], axis=1)

    def sources(self, x, harmonic=None, info=None) -> DebyeSources:
        return DebyeSources(self.grid, self.k, x[:, 0], x[:, 1],
                            np.zeros(0) if harmonic is None else harmonic,
                            self.basis if harmonic is not None and len(harmonic) else None,
                            info or {})


def assemble_N(grid: SurfaceGrid, k, side="+", opts=None) -> BlockCirculant:
    """Normal-trace system ``(r, q) -> (n.E, n.H)``."""
    return BoundarySystem(grid, k, opts).N(side)


def assemble_T(grid: SurfaceGrid, k, side="+", opts=None) -> BlockCirculant:
    """Tangential-trace system ``(r, q) -> (n x E, n x H)`` (four frame channels)."""
    return BoundarySystem(grid, k, opts).T(side)


def assemble_hybrid_Q(grid: SurfaceGrid, k, side="+", opts=None) -> BlockCirculant:
    """Hybrid system ``(r, q) -> (G0 div(n x (n x E)), n.H)``."""
    return BoundarySystem(grid, k, opts).Q(side)


def _check_condition(cond, what):
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise ConditioningError(f"{what}: condition estimate {cond:.3e} exceeds {COND_LIMIT:.0e}; "
                                "the wavenumber is close to an exceptional value", cond)


def _normal_system(sysB: BoundarySystem, side) -> _ModalSystem:
    key = ("normal", _side_sign(side))
    msys = sysB._cache.get(key)
    if msys is None:
        msys = sysB._cache[key] = _ModalSystem(sysB.N(side), sysB.grid, [0, 1])
    _check_condition(msys.condition, "normal system")
    return msys


def _system(grid, k, system, opts):
    if system is not None:
        if system.grid is not grid or system.k != complex(k):
            raise ValueError("system was built for another grid or wavenumber")
        return system
    return BoundarySystem(grid, k, opts)


# ---------------------------------------------------------------------------
# solves
# ---------------------------------------------------------------------------


def solve_static(grid: SurfaceGrid, f, h, opts=None) -> DebyeSources:
    """``k = 0``: decoupled electrostatic and magnetostatic solves.

    ``(1/2 - K0(0)) r = f`` and ``(1/2 - K0(0)) q = h``; then ``E = -grad S r``
    and ``H = -grad S q``.
    """
    f = _require_mean_zero(grid, grid.check_scalar(f, "f"), "f")
    h = _require_mean_zero(grid, grid.check_scalar(h, "h"), "h")
    layer_K0 = LayerOperators(grid, 0.0, opts).K0
    A = 0.5 * BlockCirculant.identity(grid.nu, grid.nv) - layer_K0
    sysm = _ModalSystem(A, grid, [0])
    _check_condition(sysm.condition, "static solve")
    r, _, lam_r, res_r = sysm.solve(f)
    q, _, lam_q, res_q = sysm.solve(h)
    return DebyeSources(grid, 0j, r, q, info={"condition": sysm.condition,
                                              "residual": max(res_r, res_q),
                                              "multipliers": np.concatenate([lam_r, lam_q])})


def solve_normal_bvp(grid: SurfaceGrid, k, f, h, system: BoundarySystem | None = None,
                     opts=None, side="+") -> DebyeSources:
    """Solve ``N(k)(r, q) = (f, h)``: prescribed normal components ``n.E``, ``n.H``.

    ``k = 0`` is routed to :func:`solve_static`.  Harmonic coefficients are
    zero (on genus ``> 0`` surfaces the solution is unique up to ``k``-Neumann
    fields only at exceptional wavenumbers).
    """
    if complex(k) == 0:
        return solve_static(grid, f, h, opts)
    f = _require_mean_zero(grid, grid.check_scalar(f, "f"), "f")
    h = _require_mean_zero(grid, grid.check_scalar(h, "h"), "h")
    sysB = _system(grid, k, system, opts)
    msys = _normal_system(sysB, side)
    x, _, lam, res = msys.solve(np.stack([f, h], axis=1))
    return sysB.sources(x, info={"condition": msys.condition, "residual": res, "multipliers": lam})


def _incident_fields(incident, x):
    if isinstance(incident, tuple):
        return incident[0](x), incident[1](x)
    return incident(x)


def _incident_on_grid(grid, incident):
    """``(E_t frame components, n.H)`` of the incident field at the grid nodes."""
    if isinstance(incident, IncidentTraces):
        return grid.check_tangent(incident.E_t), grid.check_scalar(incident.nH)
    E, H = _incident_fields(incident, grid.points)
    return grid.from_cartesian(E), grid.normal_component(H)


def _harmonic_extra(sysB: BoundarySystem, row_op: BlockCirculant, et_op: BlockCirculant):
    """Mode-0 extension for the harmonic unknowns of a genus > 0 hybrid solve.

    ``row_op`` maps the six trace channels to the system rows; ``et_op`` maps
    them to ``E_t`` (frame components).  The extra equations prescribe
    ``<E_t, b_l>``.
    """
    g = sysB.grid
    B = sysB.basis
    hN = B.shape[0]
    cols = np.zeros((hN, row_op.cout * g.nu), dtype=complex)
    rows_c = np.zeros((hN, hN), dtype=complex)
    for l in range(hN):
        six = sysB._harmonic_six(B[l])
        cols[l] = _fft_modes(row_op.apply(six), g)[0]
        et = et_op.apply(six)
        for i in range(hN):
            rows_c[i, l] = inner(g, et, B[i])
    et_lift = (et_op @ sysB.lift).modes[0]  # (nu*2, nu*2)
    pw = g.profile_weights
    rows = np.zeros((hN, et_lift.shape[1]), dtype=complex)
    for i in range(hN):
        prof = B[i].reshape(g.nu, g.nv, 2)[:, 0, :]
        if np.abs(B[i].reshape(g.nu, g.nv, 2) - prof[:, None, :]).max() > 1e-10 * np.abs(prof).max():
            raise TopologyError("harmonic basis field is not axisymmetric")
        w = (pw[:, None] * prof.conj()).ravel()
        rows[i] = w @ et_lift
    return _Extra(cols, rows, rows_c)


def _hybrid_solve(sysB: BoundarySystem, row1_rhs, row2_rhs, et_rhs, harmonic: bool | None = None):
    """Solve the hybrid system, extended by the harmonic unknowns when ``harmonic``.

    ``harmonic`` defaults to ``genus > 0``.  Factorizations are cached on
    ``sysB``.
    """
    g = sysB.grid
    if harmonic is None:
        harmonic = g.genus > 0
    key = ("hybrid", bool(harmonic))
    msys = sysB._cache.get(key)
    if msys is None:
        c = sysB.calc
        six_t = sysB.trace_tangential("+")
        six_n = sysB.trace_normal("+")
        tE6 = six_t.sub([0, 1], list(range(6)))
        row_op6 = BlockCirculant.block([[sysB.G0 @ c.div @ c.rot @ tE6],
                                        [six_n.sub([1], list(range(6)))]])
        extra = None
        if harmonic:
            extra = _harmonic_extra(sysB, row_op6, -1.0 * (c.rot @ tE6))
        msys = _ModalSystem(row_op6 @ sysB.lift, g, [0, 1], extra)
        sysB._cache[key] = msys
    _check_condition(msys.condition, "hybrid system")
    proj = np.array([inner(g, et_rhs, b) for b in sysB.basis]) if harmonic else None
    x, hc, lam, res = msys.solve(np.stack([row1_rhs, row2_rhs], axis=1), proj)
    if harmonic and not np.all(np.isfinite(hc)):
        raise TopologyError("harmonic correction diverged")
    src = sysB.sources(x, harmonic=hc if harmonic else None,
                       info={"condition": msys.condition, "residual": res, "multipliers": lam})
    return src, msys


def _check_points(grid: SurfaceGrid, n: int, seed: int):
    rng = np.random.default_rng(seed)
    if isinstance(grid.surface, Sphere):
        u = np.arccos(rng.uniform(-1, 1, n))
    else:
        u = rng.uniform(0, 2 * np.pi, n)
    v = rng.uniform(0, 2 * np.pi, n)
    return u, v


def _frame_at(grid, u, v):
    x, n, e1, e2, _, _ = grid.surface.frame(u, v)
    return x, n, e1, e2


def solve_pec(grid: SurfaceGrid, k, incident, system: BoundarySystem | None = None, opts=None,
              n_check: int = 64, seed: int = 0, method: str = "composed") -> ScatterSolution:
    """Scattering from a perfect conductor: ``n x E_tot = 0`` and ``n.H_tot = 0``.

    ``incident`` is a pair of callables ``(E, H)`` (as returned by
    :func:`debye_bie.sphere_ops.plane_wave` or :func:`point_dipole`), a
    callable returning both, or :class:`IncidentTraces`.  Simply connected
    surfaces use the hybrid system alone.  On genus ``g > 0``:

    * ``method="composed"`` solves the hybrid system, then removes the
      remaining harmonic part of the tangential field with
      :func:`solve_harmonic_tangential` and adds the two solutions;
    * ``method="augmented"`` solves one system in which the hybrid rows are
      extended by the harmonic coefficients of ``j_H`` and the ``2g``
      harmonic projections of the tangential field.

    Both give the same field.  Residuals are measured at ``n_check`` random
    off-grid boundary points by spectral interpolation of the traces.
    """
    k = complex(k)
    if k == 0:
        raise ValueError("solve_pec needs k != 0; use solve_static for k = 0")
    if k.imag < 0:
        raise ValueError("solve_pec needs Im k >= 0")
    if method not in ("composed", "augmented"):
        raise ValueError("method must be 'composed' or 'augmented'")
    t0 = time.perf_counter()
    sysB = _system(grid, k, system, opts)
    t1 = time.perf_counter()
    Et_in, nH_in = _incident_on_grid(grid, incident)
    # hybrid data: -(G0 div(n x n x E_in)) with n x n x E_in = -E_t
    row1 = (sysB.G0 @ sysB.calc.div).apply(Et_in)
    if grid.genus == 0 or method == "augmented":
        src, msys = _hybrid_solve(sysB, row1, -nH_in, -Et_in)
        cond = msys.condition
    else:
        src1, m1 = _hybrid_solve(sysB, row1, -nH_in, -Et_in, harmonic=False)
        defect = sysB.traces(src1, "+").E_tangential(grid) + Et_in
        coef = np.array([inner(grid, defect, b) for b in sysB.basis])
        psi = -np.tensordot(coef, sysB.basis, axes=1)
        z = np.zeros(grid.n_nodes, complex)
        src2, m2 = _hybrid_solve(sysB, z, z, psi, harmonic=True)
        cond = max(m1.condition, m2.condition)
        src = DebyeSources(grid, k, src1.r + src2.r, src1.q + src2.q, src2.harmonic, sysB.basis,
                           {"condition": cond,
                            "residual": max(src1.info["residual"], src2.info["residual"]),
                            "multipliers": np.concatenate([src1.info["multipliers"],
                                                           src2.info["multipliers"]]),
                            "harmonic_defect": coef})
    t2 = time.perf_counter()
    res = {"system": src.info["residual"]}
    res.update(_pec_residuals(sysB, src, incident, Et_in, nH_in, n_check, seed))
    t3 = time.perf_counter()
    return ScatterSolution(src, k, incident, res, cond,
                           {"assemble": t1 - t0, "solve": t2 - t1, "check": t3 - t2}, sysB)


def _pec_residuals(sysB, src, incident, Et_in, nH_in, n_check, seed):
    g = sysB.grid
    tr = sysB.traces(src, "+")
    Et_sc = tr.E_tangential(g)
    out = {"pec_tan_nodes": float(np.abs(Et_sc + Et_in).max() / max(np.abs(Et_in).max(), 1e-300)),
           "pec_norm_nodes": float(np.abs(tr.nH + nH_in).max() / max(np.abs(nH_in).max(), 1e-300))}
    if n_check:
        u, v = _check_points(g, n_check, seed)
        Et_i = interpolate(g, Et_sc, u, v)
        nH_i = interpolate(g, tr.nH, u, v)
        x, n, e1, e2 = _frame_at(g, u, v)
        if isinstance(incident, IncidentTraces):
            Ein_t = interpolate(g, incident.E_t, u, v)
            Hin_n = interpolate(g, incident.nH, u, v)
        else:
            E, H = _incident_fields(incident, x)
            Ein_t = np.stack([(E * e1).sum(-1), (E * e2).sum(-1)], axis=-1)
            Hin_n = (H * n).sum(-1)
        scale_t = max(np.abs(Ein_t).max(), 1e-300)
        scale_n = max(np.abs(Et_in).max(), np.abs(nH_in).max(), 1e-300)
        out["pec_tan"] = float(np.abs(Et_i + Ein_t).max() / scale_t)
        out["pec_norm"] = float(np.abs(nH_i + Hin_n).max() / scale_n)
    return out


def solve_harmonic_tangential(grid: SurfaceGrid, k, psi, system: BoundarySystem | None = None,
                              opts=None) -> ScatterSolution:
    """Outgoing field with tangential trace ``E_t = psi`` for a harmonic tangent field ``psi``.

    The hybrid rows are set to zero (``div E_t = 0`` and ``n.H = 0``) and the
    harmonic projections of ``E_t`` to those of ``psi``; the result has a
    nonzero harmonic current ``j_H`` whenever ``psi != 0``.
    """
    psi = grid.check_tangent(psi)
    if grid.genus == 0:
        raise TopologyError("harmonic tangential data needs a surface of genus >= 1")
    sysB = _system(grid, k, system, opts)
    t0 = time.perf_counter()
    z = np.zeros(grid.n_nodes, complex)
    src, msys = _hybrid_solve(sysB, z, z, psi)
    tr = sysB.traces(src, "+")
    scale = max(np.abs(psi).max(), 1e-300)
    res = {"system": src.info["residual"],
           "tangential": float(np.abs(tr.E_tangential(grid) - psi).max() / scale) if np.abs(psi).max() > 0
           else float(np.abs(tr.E_tangential(grid)).max()),
           "normal_H": float(np.abs(tr.nH).max() / scale)}
    return ScatterSolution(src, sysB.k, psi, res, msys.condition,
                           {"solve": time.perf_counter() - t0}, sysB)


def harmonic_response_matrix(grid: SurfaceGrid, k, system: BoundarySystem | None = None, opts=None):
    """Matrix of harmonic coefficients of ``j_H`` produced by ``psi = b_1, ..., b_2g``."""
    sysB = _system(grid, k, system, opts)
    cols = [solve_harmonic_tangential(grid, k, b, sysB).sources.harmonic for b in sysB.basis]
    return np.array(cols).T


def build_k_neumann(grid: SurfaceGrid, k, system: BoundarySystem | None = None, opts=None,
                    gram_limit: float = 1e6) -> list[KNeumannField]:
    """The ``2g`` outgoing fields with vanishing normal components ``n.E``, ``n.H``.

    For every harmonic basis field ``b_l`` the sources ``(0, 0, b_l)`` are
    corrected by ``(r, q)`` solving ``N(k)(r, q) = -(n.E, n.H)`` of the
    uncorrected field.
    """
    if grid.genus == 0:
        return []
    sysB = _system(grid, k, system, opts)
    msys = _normal_system(sysB, "+")
    Tn = sysB.trace_normal("+")
    out = []
    for l, b in enumerate(sysB.basis):
        six = sysB._harmonic_six(b)
        data = Tn.apply(six)
        x, _, lam, res = msys.solve(-data)
        c = np.zeros(sysB.basis.shape[0], complex)
        c[l] = 1.0
        src = sysB.sources(x, harmonic=c, info={"condition": msys.condition, "residual": res,
                                                 "multipliers": lam})
        tr = sysB.traces(src, "+")
        scale = max(np.abs(data).max(), 1e-300)
        nres = float(max(np.abs(tr.nE).max(), np.abs(tr.nH).max()) / scale)
        out.append(KNeumannField(src, sysB.k, nres, res, tr))
    gram = _trace_gram(grid, [f.traces for f in out])
    cond = np.linalg.cond(gram)
    if not cond < gram_limit:
        raise SolverError(f"k-Neumann fields are not independent (Gram condition {cond:.3e})")
    return out


def _trace_gram(grid, traces):
    vecs = []
    w = np.sqrt(grid.weights)
    for t in traces:
        vecs.append(np.concatenate([(t.tE * w[:, None]).ravel(), (t.tH * w[:, None]).ravel()]))
    V = np.array(vecs)
    return V.conj() @ V.T


def decouple_k_neumann(grid: SurfaceGrid, fields: list[KNeumannField]):
    """Split the span of two ``k``-Neumann fields into an E-dominated and an H-dominated field.

    Uses the boundary traces (all components) with area weights.  Returns
    ``(coefficients, ratios)``: columns of ``coefficients`` combine the input
    fields into the E-type and the H-type field; ``ratios`` are
    ``|H|/|E|`` for the first and ``|E|/|H|`` for the second.
    """
    w = np.sqrt(grid.weights)
    Ecols, Hcols = [], []
    for f in fields:
        t = f.traces
        Ecols.append(np.concatenate([t.nE * w, (t.tE * w[:, None]).ravel()]))
        Hcols.append(np.concatenate([t.nH * w, (t.tH * w[:, None]).ravel()]))
    Em, Hm = np.array(Ecols).T, np.array(Hcols).T
    _, _, vh = np.linalg.svd(Hm)
    cE = vh[-1].conj()  # combination with the least H
    _, _, vh = np.linalg.svd(Em)
    cH = vh[-1].conj()
    rE = np.linalg.norm(Hm @ cE) / np.linalg.norm(Em @ cE)
    rH = np.linalg.norm(Em @ cH) / np.linalg.norm(Hm @ cH)
    return np.stack([cE, cH], axis=1), (float(rE), float(rH))


# ---------------------------------------------------------------------------
# incident fields and diagnostics
# ---------------------------------------------------------------------------


def point_dipole(k, position, moment):
    """Electric dipole at ``position``: ``H = curl(g p)``, ``E = (i/k) curl H``.

    Returns the pair of callables ``(E, H)``.
    """
    x0 = np.asarray(position, float)
    p = np.asarray(moment, complex)
    k = complex(k)
    if k == 0:
        raise ValueError("point_dipole needs k != 0")

    def parts(x):
        d = np.asarray(x, float) - x0
        r = np.linalg.norm(d, axis=-1)
        e = np.exp(1j * k * r) / (4 * np.pi)
        g = e / r
        G1 = e * (1j * k * r - 1) / r**3
        dG1 = e * (-(k**2) / r**2 - 3 * (1j * k * r - 1) / r**4)
        return d, r, g, G1, dG1

    def E(x):
        d, r, g, G1, dG1 = parts(x)
        pd = d @ p
        hess = G1[..., None] * p + (pd * dG1 / r)[..., None] * d
        return (1j / k) * (k**2 * g[..., None] * p + hess)

    def H(x):
        d, r, g, G1, _ = parts(x)
        return np.cross(d * G1[..., None], np.broadcast_to(p, d.shape))

    return E, H


def torus_cycle(R: float, r: float, which: str, radius: float | None = None, angle: float = 0.0):
    """Coordinate circles of the torus as curves ``t -> (x(t), x'(t))``.

    ``"A"``: a meridian circle of radius ``radius`` (default ``2 r``) around
    the tube at azimuth ``angle``; it links the solid torus and lies in the
    exterior.  ``"B"``: the circle ``|x_perp| = radius`` (default ``R``) in the
    plane ``z = 0``, running through the hole of the exterior region when
    ``radius < R - r``, along the core of the solid torus when
    ``radius = R``.
    """
    if which == "A":
        a = 2 * r if radius is None else radius
        ca, sa = math.cos(angle), math.sin(angle)

        def curve(t):
            rho = R + a * np.cos(t)
            x = np.stack([rho * ca, rho * sa, a * np.sin(t)], axis=-1)
            dx = np.stack([-a * np.sin(t) * ca, -a * np.sin(t) * sa, a * np.cos(t)], axis=-1)
            return x, dx
    elif which == "B":
        b = R if radius is None else radius

        def curve(t):
            x = np.stack([b * np.cos(t), b * np.sin(t), np.zeros_like(t)], axis=-1)
            dx = np.stack([-b * np.sin(t), b * np.cos(t), np.zeros_like(t)], axis=-1)
            return x, dx
    else:
        raise ValueError("cycle must be 'A' or 'B'")
    return curve


def circulation(evaluator: Callable, curve: Callable, n: int = 256, reverse: bool = False) -> complex:
    """Line integral of ``evaluator`` (points -> vectors) over a closed curve.

    Periodic trapezoid rule in the curve parameter on ``[0, 2 pi)``.
    """
    t = 2 * np.pi * np.arange(n) / n
    x, dx = curve(t)
    F = np.asarray(evaluator(x))
    val = complex(np.sum(F * dx) * (2 * np.pi / n))
    return -val if reverse else val


def surface_circulation(grid: SurfaceGrid, tangent, which: str, index: int = 0) -> complex:
    """Circulation of a tangent field along a coordinate line of the grid.

    ``"A"``: the profile line ``v = v[index]``; ``"B"``: the parallel
    ``u = u[index]``.  Uses the grid nodes (trapezoid rule).
    """
    t = grid.check_tangent(tangent).reshape(grid.nu, grid.nv, 2)
    sigma = grid.surface.orientation
    if which == "A":
        if not grid.periodic_u:
            raise ValueError("profile lines are not closed on this surface")
        return complex(np.sum(t[:, index, 0] * grid.hu) * (2 * np.pi / grid.nu))
    if which == "B":
        return complex(sigma * np.sum(t[index, :, 1]) * grid.rho[index] * (2 * np.pi / grid.nv))
    raise ValueError("cycle must be 'A' or 'B'")


def silver_muller_residual(sources: DebyeSources, radii=(10.0, 20.0, 40.0), n_dir: int = 32, seed: int = 0):
    """``r * max |H x xhat - E|`` on spheres of the given radii (tends to zero for outgoing fields)."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n_dir, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    out = []
    for R in radii:
        E, H = sources.fields(R * d)
        out.append(float(R * np.abs(np.cross(H, d) - E).max()))
    return out


def random_bandlimited(grid: SurfaceGrid, bandwidth: int, seed: int = 0, tangent: bool = False):
    """Random smooth field resolved by the grid, with modes up to ``bandwidth``.

    Scalars are mean zero.  On the sphere: spherical harmonics of degree
    ``1..bandwidth`` (tangent fields as ``grad a + n x grad b``); on periodic
    grids: Fourier modes ``|j|, |m| <= bandwidth`` in both parameters (tangent
    fields by frame components).
    """
    from .surface import _sphere_synthesize, mean_zero_project

    rng = np.random.default_rng(seed)
    U, V = grid.uv.T
    if isinstance(grid.surface, Sphere):
        calc = grid.calculus
        if bandwidth > calc.lmax:
            raise ValueError("bandwidth exceeds the grid degree")

        def coeffs():
            c = {}
            for m in range(-bandwidth, bandwidth + 1):
                n = bandwidth + 1 - abs(m)
                c[m] = (rng.normal(size=n) + 1j * rng.normal(size=n)) / math.sqrt(2)
                if m == 0:
                    c[m][0] = 0.0
            return {m: np.concatenate([v, np.zeros(calc.lmax - bandwidth)]) for m, v in c.items()}

        if tangent:
            a = _sphere_synthesize(coeffs(), calc.lmax, calc.radius, U, V, gradient=True)
            b = _sphere_synthesize(coeffs(), calc.lmax, calc.radius, U, V, gradient=True)
            return a + rot90(grid, b)
        return _sphere_synthesize(coeffs(), calc.lmax, calc.radius, U, V)
    if 2 * bandwidth >= min(grid.nu, grid.nv):
        raise ValueError("bandwidth exceeds the grid resolution")
    js = np.arange(-bandwidth, bandwidth + 1)
    nc = 2 if tangent else 1
    C = (rng.normal(size=(js.size, js.size, nc)) + 1j * rng.normal(size=(js.size, js.size, nc))) / js.size
    Eu = np.exp(1j * np.outer(U, js))
    Ev = np.exp(1j * np.outer(V, js))
    f = np.einsum("na,abc,nb->nc", Eu, C, Ev)
    if tangent:
        return f
    return mean_zero_project(grid, f[:, 0])


@dataclass
class JumpReport:
    """Relative residuals of the four jump relations (extrapolated to the surface)."""

    residuals: dict
    eps: tuple
    n_points: int

    def max(self) -> float:
        return max(self.residuals.values())


def jump_relation_test(grid: SurfaceGrid, k, bandwidth: int = 4, eps=None, upsample_factor=None,
                       n_points: int = 8, seed: int = 0) -> JumpReport:
    """End-to-end check of the jump relations of the potentials.

    With random band-limited densities ``r, q, j, m`` the fields are
    evaluated at ``x +- eps n`` for node points ``x``, the side differences
    are extrapolated to ``eps = 0`` by polynomial interpolation, and compared
    with ``n.(E+ - E-) = r``, ``n.(H+ - H-) = q``, ``n x (E+ - E-) = -m`` and
    ``n x (H+ - H-) = j``.

    Defaults: distances in ``[0.05, 0.3]`` times the radius on the sphere and
    in ``[0.03, 0.15]`` times the tube diameter on the torus, with a refined
    integration grid that keeps the plain quadrature error at the smallest
    distance near ``1e-9``.
    """
    if eps is None:
        if isinstance(grid.surface, Sphere):
            eps = grid.surface.radius * np.linspace(0.05, 0.3, 9)
        else:
            eps = 2 * grid.surface.r * np.linspace(0.03, 0.15, 8)
    if upsample_factor is None:
        upsample_factor = 8 if isinstance(grid.surface, Sphere) else (8, 32)
    if isinstance(grid.surface, Sphere) and not np.isscalar(upsample_factor):
        upsample_factor = int(max(upsample_factor))
    r = random_bandlimited(grid, bandwidth, seed)
    q = random_bandlimited(grid, bandwidth, seed + 1)
    j = random_bandlimited(grid, bandwidth, seed + 2, tangent=True)
    m = random_bandlimited(grid, bandwidth, seed + 3, tangent=True)
    pot = PotentialSet(grid, complex(k), r, q, j, m)
    rng = np.random.default_rng(seed + 4)
    idx = rng.choice(grid.n_nodes, size=n_points, replace=False)
    x, n = grid.points[idx], grid.normals[idx]
    eps = np.asarray(eps, float)
    pts = np.concatenate([x[None] + s * eps[:, None, None] * n[None] for s in (1, -1)]).reshape(-1, 3)
    E, H = eval_EH_offsurface(pot, pts, upsample_factor=upsample_factor)
    E = E.reshape(2, eps.size, n_points, 3)
    H = H.reshape(2, eps.size, n_points, 3)
    dE, dH = E[0] - E[1], H[0] - H[1]
    V = np.vander(eps, eps.size, increasing=True)
    lim = lambda D: np.linalg.solve(V, D.reshape(eps.size, -1))[0].reshape(D.shape[1:])
    jE, jH = lim(dE), lim(dH)
    frame = lambda F: np.stack([(F * grid.e1[idx]).sum(-1), (F * grid.e2[idx]).sum(-1)], axis=-1)
    rel = lambda a, b: float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))
    res = {"nE": rel((jE * n).sum(-1), r[idx]),
           "nH": rel((jH * n).sum(-1), q[idx]),
           "tE": rel(frame(np.cross(n, jE)), -m[idx]),
           "tH": rel(frame(np.cross(n, jH)), j[idx])}
    return JumpReport(res, tuple(eps), n_points)


@dataclass
class LowFrequencyReport:
    k: float
    source_difference: float
    field_difference_E: float
    field_difference_H: float
    current_ratio: float
    H_over_E_with_h0: float
    static_condition: float
    condition: float

    def passed(self, tol: float = 1e-5) -> bool:
        return (self.source_difference < tol and self.field_difference_E < tol
                and self.field_difference_H < tol and self.current_ratio < 1e-6)


def low_frequency_limit_check(k_small: float = 1e-8, grid: SurfaceGrid | None = None, f=None, h=None,
                              opts=None, n_points: int = 24, seed: int = 0) -> LowFrequencyReport:
    """Compare the solve at ``k_small`` with the decoupled static solve.

    Default data on the unit sphere: band-limited mean-zero ``f`` and ``h``.
    Fields are compared at ``n_points`` random points on the sphere of radius 2
    (or 1.5 times the largest node radius for other grids).
    """
    from .surface import sphere_grid

    if k_small > 1e-6:
        raise ValueError("k_small must be at most 1e-6")
    grid = sphere_grid(16) if grid is None else grid
    if f is None or h is None:
        x = grid.points
        f0 = x[:, 2] + 0.5 * x[:, 0] * x[:, 1]
        h0 = x[:, 0] - 0.3 * x[:, 1] * x[:, 2]
        from .surface import mean_zero_project
        f = mean_zero_project(grid, f0) if f is None else f
        h = mean_zero_project(grid, h0) if h is None else h
    stat = solve_static(grid, f, h, opts)
    dyn = solve_normal_bvp(grid, k_small, f, h, opts=opts)
    g = grid
    nrm = lambda a: math.sqrt(abs(inner(g, a, a)))
    sd = max(nrm(dyn.r - stat.r) / max(nrm(stat.r), 1e-300), nrm(dyn.q - stat.q) / max(nrm(stat.q), 1e-300))
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n_points, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    R = 1.5 * np.linalg.norm(grid.points, axis=1).max()
    pts = R * d
    E0, H0 = stat.fields(pts)
    E1, H1 = dyn.fields(pts)
    fE = np.abs(E1 - E0).max() / max(np.abs(E0).max(), 1e-300)
    fH = np.abs(H1 - H0).max() / max(np.abs(H0).max(), 1e-300)
    j = dyn.j
    jr = math.sqrt(abs(inner(g, j, j))) / max(nrm(dyn.r) + nrm(dyn.q), 1e-300)
    dyn0 = solve_normal_bvp(grid, k_small, f, np.zeros_like(h), opts=opts)
    E2, H2 = dyn0.fields(pts)
    ratio = np.abs(H2).max() / max(np.abs(E2).max(), 1e-300)
    return LowFrequencyReport(float(k_small), float(sd), float(fE), float(fH), float(jr), float(ratio),
                              stat.info["condition"], dyn.info["condition"])
