"""Exact spectral realization of the Debye-source formulation on the unit sphere.

Every operator of the formulation is diagonal in the spherical-harmonic basis.
With ``r = sum a_lm Y_lm`` and ``q = sum b_lm Y_lm`` the exterior traces are

    n.E  = m_n(k, l) a_lm           n.H = m_n(k, l) b_lm
    E_t  = m_n a (h_l + k h_l')/h_l  grad Y / L  -  i k m_n b  n x grad Y / L

with ``L = l(l+1)`` and ``h_l = h_l(k)``.  Off the surface the field is
rebuilt from Debye potentials ``v, u`` (see :func:`debye_to_mie`).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .specfun import bessel_table, legendre_columns, lm_count, lm_index

__all__ = [
    "SingularMultiplierError",
    "SphHarmCoeffs",
    "SphereDebyeSolution",
    "MieCoeffs",
    "SphereTraces",
    "multiplier_normal",
    "multiplier_tangential",
    "multiplier_normal_with_derivative",
    "solve_normal_sphere",
    "solve_hybrid_sphere",
    "debye_to_mie",
    "eval_traces_sphere",
    "eval_field_sphere",
    "sphere_frame",
    "project_tangential",
    "plane_wave",
    "sphere_quadrature",
]

SINGULAR_TOL = 1e-13


class SingularMultiplierError(ArithmeticError):
    """A diagonal multiplier vanished (k is at or near one of its zeros)."""


# ---------------------------------------------------------------------------
# coefficient tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SphHarmCoeffs:
    """Triangular coefficient table ``{a_lm : 0 <= l <= lmax, |m| <= l}``.

    ``data[l*l + l + m]`` holds ``a_lm``.
    """

    lmax: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.shape != (lm_count(self.lmax),):
            raise ValueError(f"expected {lm_count(self.lmax)} coefficients, got {data.shape}")
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, lmax: int) -> "SphHarmCoeffs":
        return cls(lmax, np.zeros(lm_count(lmax), dtype=complex))

    @classmethod
    def impulse(cls, lmax: int, l: int, m: int, value: complex = 1.0) -> "SphHarmCoeffs":
        c = np.zeros(lm_count(lmax), dtype=complex)
        c[lm_index(l, m)] = value
        return cls(lmax, c)

    @classmethod
    def random(cls, lmax: int, rng: np.random.Generator, lmin: int = 1) -> "SphHarmCoeffs":
        c = rng.standard_normal(lm_count(lmax)) + 1j * rng.standard_normal(lm_count(lmax))
        c[: lm_count(lmin - 1)] = 0.0
        return cls(lmax, c)

    @property
    def l(self) -> np.ndarray:
        return degrees(self.lmax)

    @property
    def m(self) -> np.ndarray:
        return orders(self.lmax)

    def __getitem__(self, lm: tuple[int, int]) -> complex:
        l, m = lm
        if abs(m) > l or l > self.lmax:
            raise IndexError(f"(l={l}, m={m}) outside table with lmax={self.lmax}")
        return self.data[lm_index(l, m)]

    def scaled(self, factor: np.ndarray) -> "SphHarmCoeffs":
        """Multiply every entry by a per-degree factor ``factor[l]``."""
        return SphHarmCoeffs(self.lmax, self.data * np.asarray(factor)[self.l])

    def truncate(self, lmax: int) -> "SphHarmCoeffs":
        if lmax <= self.lmax:
            return SphHarmCoeffs(lmax, self.data[: lm_count(lmax)])
        out = np.zeros(lm_count(lmax), dtype=complex)
        out[: self.data.size] = self.data
        return SphHarmCoeffs(lmax, out)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l", "m", "re", "im"])
            for l, m, v in zip(self.l, self.m, self.data):
                w.writerow([int(l), int(m), f"{v.real:.15e}", f"{v.imag:.15e}"])

    @classmethod
    def from_csv(cls, path) -> "SphHarmCoeffs":
        rows = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append((int(row["l"]), int(row["m"]), complex(float(row["re"]), float(row["im"]))))
        lmax = max((r[0] for r in rows), default=0)
        out = cls.zeros(lmax)
        for l, m, v in rows:
            out.data[lm_index(l, m)] = v
        return out


def degrees(lmax: int) -> np.ndarray:
    return np.repeat(np.arange(lmax + 1), 2 * np.arange(lmax + 1) + 1)


def orders(lmax: int) -> np.ndarray:
    return np.concatenate([np.arange(-l, l + 1) for l in range(lmax + 1)])


@dataclass(frozen=True)
class SphereDebyeSolution:
    """Debye-source coefficients ``a`` (of r) and ``b`` (of q) at wavenumber ``k``."""

    k: complex
    a: SphHarmCoeffs
    b: SphHarmCoeffs

    def __post_init__(self):
        if self.a.data[0] != 0 or self.b.data[0] != 0:
            raise ValueError("Debye sources must have a vanishing l = 0 mode")

    @property
    def lmax(self) -> int:
        return self.a.lmax

    def alpha(self) -> SphHarmCoeffs:
        """Coefficients of ``j`` on ``grad Y`` (curl-free part): ``-ik a / L``."""
        return self.a.scaled(-1j * self.k / _safe_L(self.lmax))

    def beta(self) -> SphHarmCoeffs:
        """Coefficients of ``j`` on ``n x grad Y``: ``+ik b / L``."""
        return self.b.scaled(1j * self.k / _safe_L(self.lmax))


@dataclass(frozen=True)
class MieCoeffs:
    """Debye potentials ``v = sum a_lm h_l(k r)/h_l(k) Y_lm`` and likewise ``u``.

    The radial factor is normalized to one on the unit sphere so that
    ``n.E = L a`` and ``n.H = L b`` there.
    """

    k: complex
    a: SphHarmCoeffs
    b: SphHarmCoeffs


@dataclass(frozen=True)
class SphereTraces:
    """Exterior boundary traces on the unit sphere.

    ``c`` and ``d`` are the coefficients of ``n.E`` and ``n.H``; ``e_grad``
    and ``e_star`` those of the tangential electric field on the normalized
    vector harmonics ``grad Y / sqrt(L)`` and ``n x grad Y / sqrt(L)``;
    ``h_grad``, ``h_star`` likewise for the magnetic field.
    """

    c: SphHarmCoeffs
    d: SphHarmCoeffs
    e_grad: SphHarmCoeffs
    e_star: SphHarmCoeffs
    h_grad: SphHarmCoeffs
    h_star: SphHarmCoeffs


def _safe_L(lmax: int) -> np.ndarray:
    l = np.arange(lmax + 1, dtype=float)
    L = l * (l + 1)
    L[0] = np.inf
    return L


# ---------------------------------------------------------------------------
# multipliers
# ---------------------------------------------------------------------------


def multiplier_normal(k, l):
    """Diagonal symbol ``m_n(k, l) = k h_l (i+k) j_l + i k^2 j_l' h_l`` of the normal system.

    Evaluated as ``i k^2 j_{l-1} h_l - i l k j_l h_l + k^2 j_l h_l`` from scaled
    products, which is free of overflow and cancellation for small ``k`` and
    large ``l``.  At ``k = 0`` the limit ``(l+1)/(2l+1)`` is returned.
    """
    l = np.asarray(l)
    if np.any(l < 1):
        raise ValueError("multiplier defined for l >= 1")
    kb, lb = np.broadcast_arrays(np.asarray(k, dtype=complex), l)
    out = np.empty(kb.shape, dtype=complex)
    zero = kb == 0
    out[zero] = (lb[zero] + 1) / (2 * lb[zero] + 1)
    nz = ~zero
    if np.any(nz):
        kk, ll = kb[nz], lb[nz]
        tab = bessel_table(int(ll.max()), kk)
        idx = np.arange(kk.size)
        jh = lambda a, b: _pick(tab, a, b, idx)
        out[nz] = 1j * kk**2 * jh(ll - 1, ll) - 1j * ll * kk * jh(ll, ll) + kk**2 * jh(ll, ll)
    return out[()] if out.ndim == 0 else out


def multiplier_normal_with_derivative(k, l: int, phase_scaled: bool = False):
    """Return ``(m_n(k, l), d m_n / dk)`` for an array of ``k`` and one degree ``l``.

    With ``phase_scaled`` both are multiplied by ``exp(-2ik)`` and the
    derivative is that of the product.  The product has the same zeros as
    ``m_n`` and stays of moderate size deep in the lower half plane, where
    ``m_n`` itself grows like ``exp(2|Im k|)``.
    """
    k = np.asarray(k, dtype=complex)
    if l < 1:
        raise ValueError("multiplier defined for l >= 1")
    if np.any(k == 0):
        raise ValueError("derivative evaluation needs k != 0")
    lower = k.imag < 0
    m = np.empty(k.shape, dtype=complex)
    dm = np.empty(k.shape, dtype=complex)
    for mask, scaled in ((lower, phase_scaled), (~lower, False)):
        if not np.any(mask):
            continue
        kk = k[mask]
        tab = bessel_table(l, kk, exp_scaled=scaled)
        JH = tab.jh(l, l)
        JpH = tab.jh(l, l, dj=True)
        JHp = tab.jh(l, l, dh=True)
        JpHp = tab.jh(l, l, dj=True, dh=True)
        JppH = -2.0 / kk * JpH - (1.0 - l * (l + 1) / kk**2) * JH
        mv = kk * (1j + kk) * JH + 1j * kk**2 * JpH
        dmv = ((1j + 2 * kk) * JH + kk * (1j + kk) * (JpH + JHp)
               + 2j * kk * JpH + 1j * kk**2 * (JppH + JpHp))
        if phase_scaled:
            ph = np.exp(-2j * kk.real) if scaled else np.exp(-2j * kk)
            mv, dmv = mv * ph, (dmv - 2j * mv) * ph
        m[mask], dm[mask] = mv, dmv
    return m, dm


def _pick(tab, a, b, idx):
    """``j_a h_b`` for per-point degree arrays ``a``, ``b`` (1-d over points)."""
    jt = tab.jt[a, idx]
    ht = tab.ht[b, idx]
    return jt * ht * np.exp(tab.logS[b, idx] - tab.logS[a, idx])


def multiplier_tangential(k, l):
    """Diagonal symbol ``m_t(k, l)`` of the preconditioned tangential row.

    ``m_t = -k/(2l+1) [ i L j h - k j (k h_{l-1} - l h)
    - i k^2 ((l+1) j_{l-1} h_{l-1} + l j_{l+1} h_{l+1}) / (2l+1) ]``
    evaluated at argument ``k``; the ``k = 0`` limit is ``-L/(2l+1)^2``.
    It is the eigenvalue of ``G_0 div[n x (n x E_+)]`` on an r-only mode.
    """
    l = np.asarray(l)
    if np.any(l < 1):
        raise ValueError("multiplier defined for l >= 1")
    kb, lb = np.broadcast_arrays(np.asarray(k, dtype=complex), l)
    out = np.empty(kb.shape, dtype=complex)
    zero = kb == 0
    lz = lb[zero]
    out[zero] = -lz * (lz + 1) / (2 * lz + 1) ** 2
    nz = ~zero
    if np.any(nz):
        kk, ll = kb[nz], lb[nz]
        tab = bessel_table(int(ll.max()) + 1, kk)
        idx = np.arange(kk.size)
        jh = lambda a, b: _pick(tab, a, b, idx)
        L = ll * (ll + 1)
        br = (1j * L * jh(ll, ll)
              - kk * (kk * jh(ll, ll - 1) - ll * jh(ll, ll))
              - 1j * kk**2 * ((ll + 1) * jh(ll - 1, ll - 1) + ll * jh(ll + 1, ll + 1)) / (2 * ll + 1))
        out[nz] = -kk / (2 * ll + 1) * br
    return out[()] if out.ndim == 0 else out


def _multipliers(k, lmax: int, which: str) -> np.ndarray:
    l = np.arange(1, lmax + 1)
    fn = multiplier_normal if which == "n" else multiplier_tangential
    vals = np.zeros(lmax + 1, dtype=complex)
    vals[1:] = fn(k, l)
    small = np.abs(vals[1:]) < SINGULAR_TOL
    if np.any(small):
        bad = int(l[small][0])
        raise SingularMultiplierError(f"m_{which}(k={k}, l={bad}) is numerically zero")
    return vals


def _inverse(vals: np.ndarray) -> np.ndarray:
    """Reciprocal of a per-degree multiplier table, with the l = 0 slot set to zero."""
    out = np.zeros_like(vals)
    out[1:] = 1.0 / vals[1:]
    return out


def _mean_zero(c: SphHarmCoeffs, name: str):
    if c.data[0] != 0:
        raise ValueError(f"{name} must have a vanishing l = 0 mode")


# ---------------------------------------------------------------------------
# solves
# ---------------------------------------------------------------------------


def solve_normal_sphere(k, c: SphHarmCoeffs, d: SphHarmCoeffs) -> SphereDebyeSolution:
    """Solve ``n.E_+ = sum c Y``, ``n.H_+ = sum d Y`` for the Debye sources."""
    _mean_zero(c, "c")
    _mean_zero(d, "d")
    inv = _inverse(_multipliers(k, c.lmax, "n"))
    return SphereDebyeSolution(k, c.scaled(inv), d.scaled(inv))


def solve_hybrid_sphere(k, p: SphHarmCoeffs, q: SphHarmCoeffs) -> SphereDebyeSolution:
    """PEC scattering with incident tangential field ``sum p grad Y/sqrt(L) + q n x grad Y/sqrt(L)``.

    The hybrid rows are ``m_t a = -sqrt(L) p / (2l+1)`` and
    ``m_n b = sqrt(L) q / (ik)``; the resulting scattered field cancels the
    incident tangential electric field and normal magnetic field.
    """
    if k == 0:
        raise ValueError("k = 0 is handled by the static path")
    _mean_zero(p, "p")
    _mean_zero(q, "q")
    lmax = p.lmax
    l = np.arange(lmax + 1, dtype=float)
    sl = np.sqrt(l * (l + 1))
    mt = _multipliers(k, lmax, "t")
    mn = _multipliers(k, lmax, "n")
    a = p.scaled(-sl / (2 * l + 1) * _inverse(mt))
    b = q.scaled(sl / (1j * k) * _inverse(mn))
    return SphereDebyeSolution(k, a, b)


# ---------------------------------------------------------------------------
# traces, Mie map, fields
# ---------------------------------------------------------------------------


def _radial_ratio(k, lmax: int) -> np.ndarray:
    """``(h_l(k) + k h_l'(k)) / h_l(k)`` for ``l = 0..lmax``."""
    tab = bessel_table(lmax, k)
    return 1.0 + k * tab.hpt / tab.ht


def eval_traces_sphere(sol: SphereDebyeSolution) -> SphereTraces:
    """Exterior traces of the field generated by ``sol``."""
    k, lmax = sol.k, sol.lmax
    mn = np.zeros(lmax + 1, dtype=complex)
    mn[1:] = multiplier_normal(k, np.arange(1, lmax + 1))
    l = np.arange(lmax + 1, dtype=float)
    sl = np.sqrt(l * (l + 1))
    sl_inv = np.where(l > 0, 1.0 / np.where(l > 0, sl, 1.0), 0.0)
    # (h + k h')/h tends to -l as k -> 0
    rad = _radial_ratio(k, lmax) if k != 0 else -l
    c = sol.a.scaled(mn)
    d = sol.b.scaled(mn)
    return SphereTraces(
        c=c,
        d=d,
        e_grad=c.scaled(rad * sl_inv),
        e_star=d.scaled(-1j * k * sl_inv),
        h_grad=d.scaled(rad * sl_inv),
        h_star=c.scaled(1j * k * sl_inv),
    )


def debye_to_mie(sol: SphereDebyeSolution) -> MieCoeffs:
    """Debye potentials ``(v, u)`` reproducing the field of ``sol`` outside the sphere.

    ``a^Mie = c / L`` and ``b^Mie = d / L`` where ``c, d`` are the normal
    traces of ``E`` and ``H``.
    """
    tr = eval_traces_sphere(sol)
    Linv = 1.0 / _safe_L(sol.lmax)
    return MieCoeffs(sol.k, tr.c.scaled(Linv), tr.d.scaled(Linv))


def sphere_frame(theta, phi):
    """Cartesian unit vectors ``(e_r, e_theta, e_phi)``; each of shape ``theta.shape + (3,)``."""
    st, ct, sp, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
    er = np.stack([st * cp, st * sp, ct], axis=-1)
    et = np.stack([ct * cp, ct * sp, -st], axis=-1)
    ep = np.stack([-sp, cp, np.zeros_like(st)], axis=-1)
    return er, et, ep


def _harmonics_at(lmax: int, theta, phi):
    """Return ``Y, dY/dtheta, (1/sin) dY/dphi`` as arrays ``(n_lm, npts)``."""
    n = lm_count(lmax)
    Y = np.zeros((n,) + theta.shape, dtype=complex)
    Yt = np.zeros_like(Y)
    Yp = np.zeros_like(Y)
    for m, P, dP, Q in legendre_columns(lmax, theta):
        e = np.exp(1j * m * phi)
        ls = np.arange(m, lmax + 1)
        for sgn in ((1,) if m == 0 else (1, -1)):
            idx = lm_index(ls, sgn * m)
            if sgn == 1:
                Y[idx], Yt[idx], Yp[idx] = P * e, dP * e, 1j * m * Q * e
            else:
                f = (-1) ** m
                Y[idx] = f * np.conj(P * e)
                Yt[idx] = f * np.conj(dP * e)
                Yp[idx] = f * np.conj(1j * m * Q * e)
    return Y, Yt, Yp


def eval_field_sphere(sol, x, eps: float = 1e-8, on_surface: bool = False):
    """Scattered ``(E, H)`` at points ``x`` (shape ``(..., 3)``) with ``|x| > 1 + eps``.

    ``sol`` is a :class:`SphereDebyeSolution` or :class:`MieCoeffs`.  Fields
    are built from ``E = curl curl (x v) + ik curl (x u)`` and
    ``H = curl curl (x u) - ik curl (x v)``.  With ``on_surface=True`` the
    points are projected to the unit sphere and the exterior limit is returned.
    """
    mie = debye_to_mie(sol) if isinstance(sol, SphereDebyeSolution) else sol
    k, lmax = mie.k, mie.a.lmax
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    x = x.reshape(-1, 3)
    r = np.linalg.norm(x, axis=-1)
    if on_surface:
        x = x / r[:, None]
        r = np.ones_like(r)
    elif np.any(r <= 1.0 + eps):
        raise ValueError(f"evaluation point at radius {r.min():.3e} is too close to the sphere")
    if k == 0:
        raise ValueError("field evaluation needs k != 0")
    theta = np.arccos(np.clip(x[:, 2] / r, -1.0, 1.0))
    phi = np.arctan2(x[:, 1], x[:, 0])
    Y, Yt, Yp = _harmonics_at(lmax, theta, phi)
    er, et, ep = sphere_frame(theta, phi)

    tab_r = bessel_table(lmax, k * r)
    tab_1 = bessel_table(lmax, k)
    # f = h_l(kr)/h_l(k) and its r-derivative, via scaled values
    ratio = np.exp(tab_r.logS - tab_1.logS[:, None])[: lmax + 1]
    f = tab_r.ht / tab_1.ht[:, None] * ratio
    fp = k * tab_r.hpt / tab_1.ht[:, None] * ratio
    ls = degrees(lmax)
    Lfac = (ls * (ls + 1.0))[:, None]
    fl, fpl = f[ls], fp[ls]

    av = mie.a.data[:, None]
    bu = mie.b.data[:, None]
    radial_v = (Lfac * fl / r * Y * av).sum(0)
    radial_u = (Lfac * fl / r * Y * bu).sum(0)
    tang_v = (fl / r + fpl) * av  # multiplies grad_S Y
    tang_u = (fl / r + fpl) * bu
    # grad_S Y = Yt e_theta + Yp e_phi ; r_hat x grad_S Y = Yt e_phi - Yp e_theta
    g_t = lambda c: (c * Yt).sum(0)
    g_p = lambda c: (c * Yp).sum(0)
    Eth = g_t(tang_v) + 1j * k * g_p(fl * bu)
    Eph = g_p(tang_v) - 1j * k * g_t(fl * bu)
    Hth = g_t(tang_u) - 1j * k * g_p(fl * av)
    Hph = g_p(tang_u) + 1j * k * g_t(fl * av)
    E = radial_v[:, None] * er + Eth[:, None] * et + Eph[:, None] * ep
    H = radial_u[:, None] * er + Hth[:, None] * et + Hph[:, None] * ep
    return E.reshape(shape + (3,)), H.reshape(shape + (3,))


# ---------------------------------------------------------------------------
# incident data
# ---------------------------------------------------------------------------


def sphere_quadrature(lmax: int):
    """Gauss-Legendre x uniform grid exact for products of degree ``<= lmax`` harmonics."""
    nt = lmax + 2
    nph = 2 * nt
    x, w = np.polynomial.legendre.leggauss(nt)
    theta = np.arccos(x)
    phi = 2 * np.pi * np.arange(nph) / nph
    T, P = np.meshgrid(theta, phi, indexing="ij")
    W = np.repeat(w[:, None], nph, axis=1) * (2 * np.pi / nph)
    return T.ravel(), P.ravel(), W.ravel()


def project_tangential(field: Callable[[np.ndarray], np.ndarray], lmax: int):
    """Project the tangential part of ``field(points)`` onto normalized vector harmonics.

    Returns ``(p, q)`` with ``E_t = sum p grad Y/sqrt(L) + q n x grad Y/sqrt(L)``.
    """
    theta, phi, w = sphere_quadrature(lmax + 2)
    er, et, ep = sphere_frame(theta, phi)
    F = np.asarray(field(er))
    ft = (F * et).sum(-1)
    fp = (F * ep).sum(-1)
    _, Yt, Yp = _harmonics_at(lmax, theta, phi)
    L = degrees(lmax) * (degrees(lmax) + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(L > 0, 1.0 / np.sqrt(L), 0.0)
    grad_proj = (np.conj(Yt) * ft + np.conj(Yp) * fp) @ w
    star_proj = (np.conj(-Yp) * ft + np.conj(Yt) * fp) @ w
    return SphHarmCoeffs(lmax, grad_proj * s), SphHarmCoeffs(lmax, star_proj * s)


def plane_wave(k, direction=(0.0, 0.0, 1.0), polarization=(1.0, 0.0, 0.0)):
    """Incident plane wave ``E = p e^{ik d.x}``, ``H = d x E`` as a callable pair."""
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    p = np.asarray(polarization, complex)
    p = p - d * (d @ p)
    hp = np.cross(d, p)

    def E(x):
        return np.exp(1j * k * (x @ d))[..., None] * p

    def H(x):
        return np.exp(1j * k * (x @ d))[..., None] * hp

    return E, H
