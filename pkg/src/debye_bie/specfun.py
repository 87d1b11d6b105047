"""Special functions of complex argument.

Spherical Bessel and outgoing Hankel functions, their derivatives and products,
orthonormal associated Legendre functions, and scalar and vector spherical
harmonics.

The Bessel routines work with *scaled* sequences.  With
``t_n = max(1, (2n+1)/|z|)`` and ``S_l = t_1 t_2 ... t_l`` we carry

    jt_l = j_l(z) * S_l        ht_l = h_l(z) / S_l

which stay of moderate size for every degree, so products such as
``j_l(z) h_l(z)`` are formed without overflow even when ``j_l`` underflows and
``h_l`` overflows separately (small ``|z|``, large ``l``).  ``j`` comes from a
normalized downward (Miller) recurrence, ``h`` from the upward recurrence in
the upper half plane and from the reflection ``h_l(z) = 2 j_l(z) -
conj(h_l(conj z))`` below the real axis.
"""

from __future__ import annotations

import enum
import math
import warnings

import numpy as np
from numpy.polynomial import Polynomial

__all__ = [
    "BesselTable",
    "bessel_table",
    "sph_bessel_j",
    "sph_hankel_h1",
    "sph_bessel_derivs",
    "hankel_poly",
    "legendre_table",
    "legendre_columns",
    "sph_harm_Y",
    "VSHKind",
    "vec_sph_harm",
    "lm_index",
    "lm_count",
]

_FOUR_PI = 4.0 * math.pi
_IM_OVERFLOW = 700.0


# ---------------------------------------------------------------------------
# spherical Bessel / Hankel tables
# ---------------------------------------------------------------------------


class BesselTable:
    """Scaled values of ``j_l`` and ``h_l`` for ``0 <= l <= lmax`` at fixed ``z``.

    Arrays have shape ``(lmax + 1,) + z.shape``.  ``logS[l]`` is
    ``log S_l`` (real).  Use :meth:`jh` for products, :meth:`j` and :meth:`h`
    for unscaled values.
    """

    def __init__(self, lmax: int, z, jt, ht, logS, jpt, hpt):
        self.lmax = lmax
        self.z = z
        self.jt = jt
        self.ht = ht
        self.logS = logS
        self.jpt = jpt  # j_l'(z) * S_l
        self.hpt = hpt  # h_l'(z) / S_l

    def j(self, l):
        return self.jt[l] * np.exp(-self.logS[l])

    def h(self, l):
        return self.ht[l] * np.exp(self.logS[l])

    def jp(self, l):
        return self.jpt[l] * np.exp(-self.logS[l])

    def hp(self, l):
        return self.hpt[l] * np.exp(self.logS[l])

    def jh(self, a, b, dj: bool = False, dh: bool = False):
        """Product ``j_a(z) h_b(z)`` (or with derivatives), overflow free."""
        ja = self.jpt[a] if dj else self.jt[a]
        hb = self.hpt[b] if dh else self.ht[b]
        return ja * hb * np.exp(self.logS[b] - self.logS[a])


def _miller_start(lmax: int, zabs: float) -> int:
    return int(max(lmax, zabs) + 30 + 4.0 * math.sqrt(zabs + 1.0))


def bessel_table(lmax: int, z, exp_scaled: bool = False) -> BesselTable:
    """Build a :class:`BesselTable` for degrees ``0..lmax`` (``z`` may be an array).

    Entries with ``z == 0`` carry the analytic limit for ``j`` and ``nan`` for ``h``.
    With ``exp_scaled`` the ``j`` entries are additionally multiplied by
    ``exp(-|Im z|)`` and the ``h`` entries by ``exp(Im z)``, which keeps
    products finite far from the real axis.
    """
    if lmax < 0:
        raise ValueError("lmax must be non-negative")
    z = np.asarray(z, dtype=complex)
    shape = z.shape
    zf = z.ravel()
    zero = zf == 0
    zs = np.where(zero, 1.0, zf)
    za = np.abs(zs)
    if not exp_scaled and np.any(np.abs(zs.imag) > _IM_OVERFLOW):
        warnings.warn("|Im z| too large: spherical Bessel values overflow", RuntimeWarning)

    top = _miller_start(lmax + 1, float(za.max(initial=0.0)))
    n = np.arange(top + 2)
    t = np.maximum(1.0, (2 * n[:, None] + 1) / za[None, :])
    t[0] = 1.0
    logS = np.cumsum(np.log(t), axis=0)

    # downward recurrence for j (arbitrary start, normalized afterwards)
    jt = np.zeros((top + 2, zf.size), dtype=complex)
    jt[top] = 1e-30
    for m in range(top, 0, -1):
        jt[m - 1] = (2 * m + 1) / (zs * t[m]) * jt[m] - jt[m + 1] / (t[m] * t[m + 1])
        # rescale to avoid overflow of the unnormalized sequence
        big = np.abs(jt[m - 1]) > 1e250
        if np.any(big):
            jt[:, big] *= 1e-250
    y = zs.imag
    sc = np.exp(-np.abs(y)) if exp_scaled else 1.0
    j0 = _j0(zs, sc)
    j1 = _j1(zs, sc)
    use0 = np.abs(j0) >= np.abs(j1)
    scale = np.where(use0, j0 / np.where(use0, jt[0], 1.0),
                     j1 * t[1] / np.where(use0, 1.0, jt[1]))
    jt = jt[: lmax + 2] * scale

    # Upward recurrence for h, run in the closed upper half plane only.  Below
    # the real axis it loses all accuracy inside the region where h_l has its
    # zeros, so there h_l(z) = 2 j_l(z) - conj(h_l(conj z)) is used instead.
    lower = zs.imag < 0
    zu = np.where(lower, zs.conj(), zs)
    ht = np.zeros((lmax + 2, zf.size), dtype=complex)
    e = np.exp(1j * zu.real) if exp_scaled else np.exp(1j * zu)
    ht[0] = -1j * e / zu
    ht[1] = -e * (zu + 1j) / zu**2 / t[1]
    for m in range(1, lmax + 1):
        ht[m + 1] = (2 * m + 1) / (zu * t[m + 1]) * ht[m] - ht[m - 1] / (t[m] * t[m + 1])
    if np.any(lower):
        refl = np.exp(2.0 * y[lower]) if exp_scaled else 1.0
        ht[:, lower] = (2.0 * jt[:, lower] * np.exp(-2.0 * logS[: lmax + 2, lower])
                        - ht[:, lower].conj() * refl)

    # derivatives: f_l' = f_{l-1} - (l+1)/z f_l ; f_0' = -f_1
    ls = np.arange(lmax + 1)[:, None]
    jpt = np.empty((lmax + 1, zf.size), dtype=complex)
    hpt = np.empty((lmax + 1, zf.size), dtype=complex)
    jpt[0] = -jt[1] / t[1]
    hpt[0] = -ht[1] * t[1]
    if lmax >= 1:
        jpt[1:] = jt[:lmax] * t[1 : lmax + 1] - (ls[1:] + 1) / zs * jt[1 : lmax + 1]
        hpt[1:] = ht[:lmax] / t[1 : lmax + 1] - (ls[1:] + 1) / zs * ht[1 : lmax + 1]

    logS = logS[: lmax + 2]
    if np.any(zero):
        # analytic limit at the origin
        jt[:, zero] = 0.0
        jt[0, zero] = 1.0
        jpt[:, zero] = 0.0
        if lmax >= 1:
            jpt[1, zero] = 1.0 / 3.0
        logS[:, zero] = 0.0
        ht[:, zero] = np.nan
        hpt[:, zero] = np.nan

    def _r(a):
        return a.reshape(a.shape[:1] + shape)

    return BesselTable(lmax, z, _r(jt[: lmax + 1]), _r(ht[: lmax + 1]),
                       _r(logS), _r(jpt), _r(hpt))


def _sin_cos(z, sc):
    """``sin z`` and ``cos z`` times ``sc`` (``sc = exp(-|Im z|)`` or 1), without overflow."""
    if np.isscalar(sc):
        return np.sin(z), np.cos(z)
    x, y = z.real, z.imag
    ep = np.exp(1j * x - y - np.abs(y))  # e^{iz} * sc
    em = np.exp(-1j * x + y - np.abs(y))  # e^{-iz} * sc
    return (ep - em) / 2j, (ep + em) / 2


def _j0(z, sc=1.0):
    small = np.abs(z) < 1e-3
    zz = z * z
    series = (1.0 - zz / 6.0 + zz * zz / 120.0) * sc
    s, _ = _sin_cos(z, sc)
    return np.where(small, series, s / np.where(small, 1.0, z))


def _j1(z, sc=1.0):
    small = np.abs(z) < 0.1
    zz = z * z
    series = z / 3.0 * (1.0 - zz / 10.0 * (1.0 - zz / 28.0 * (1.0 - zz / 54.0))) * sc
    zsafe = np.where(small, 1.0, z)
    s, c = _sin_cos(zsafe, sc)
    return np.where(small, series, (s - zsafe * c) / zsafe**2)


def _as_degree(l):
    l = np.asarray(l)
    if np.any(l < 0) or not np.issubdtype(l.dtype, np.integer):
        raise ValueError("degree must be a non-negative integer")
    return l


def _gather(l, z, fn):
    l = _as_degree(l)
    lb, zb = np.broadcast_arrays(l, np.asarray(z, dtype=complex))
    tab = bessel_table(int(lb.max(initial=0)), zb)
    out = np.take_along_axis(fn(tab), lb[None, ...], axis=0)[0]
    return out[()] if out.ndim == 0 else out


def sph_bessel_j(l, z):
    """Spherical Bessel function of the first kind ``j_l(z)``."""
    return _gather(l, z, lambda t: t.jt * np.exp(-t.logS[: t.lmax + 1]))


def sph_hankel_h1(l, z):
    """Outgoing spherical Hankel function ``h_l(z) = j_l(z) + i y_l(z)``.

    Raises ``ZeroDivisionError`` at ``z = 0``.
    """
    if np.any(np.asarray(z) == 0):
        raise ZeroDivisionError("spherical Hankel function is singular at z = 0")
    return _gather(l, z, lambda t: t.ht * np.exp(t.logS[: t.lmax + 1]))


def sph_bessel_derivs(l, z):
    """Return ``(j_l'(z), h_l'(z))``; ``h_l'`` is ``nan`` at ``z = 0``."""
    jp = _gather(l, z, lambda t: t.jpt * np.exp(-t.logS[: t.lmax + 1]))
    hp = _gather(l, z, lambda t: t.hpt * np.exp(t.logS[: t.lmax + 1]))
    return jp, hp


def hankel_poly(l: int) -> Polynomial:
    """Polynomial ``p_l`` with ``h_l(z) = p_l(z) e^{iz} / z^{l+1}``.

    Built from ``p_0 = -i``, ``p_1 = -(z + i)`` and
    ``p_{l+1} = (2l+1) p_l - z^2 p_{l-1}``.
    """
    p_prev = Polynomial([-1j])
    if l == 0:
        return p_prev
    p = Polynomial([-1j, -1.0])
    z2 = Polynomial([0, 0, 1])
    for n in range(1, l):
        p_prev, p = p, (2 * n + 1) * p - z2 * p_prev
    return p


# ---------------------------------------------------------------------------
# associated Legendre functions and spherical harmonics
# ---------------------------------------------------------------------------


def lm_count(lmax: int) -> int:
    return (lmax + 1) ** 2


def lm_index(l, m):
    """Flat position of ``(l, m)`` in a triangular table ordered by ``l`` then ``m``."""
    return l * l + l + m


def legendre_columns(lmax: int, theta, mmax: int | None = None):
    """Yield ``(m, P, dP, P_over_sin)`` for ``m = 0..mmax``.

    ``P[l - m]`` is the orthonormal associated Legendre function
    ``sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) P_l^m(cos theta)`` with the
    Condon-Shortley phase, ``dP`` its ``theta`` derivative, and ``P_over_sin``
    the regular quotient ``P / sin(theta)`` (only meaningful for ``m >= 1``;
    zeros are returned for ``m = 0``).
    """
    theta = np.asarray(theta, dtype=float)
    x = np.cos(theta)
    s = np.sin(theta)
    mmax = lmax if mmax is None else min(mmax, lmax)

    def column(m, pmm, qmm):
        P = np.zeros((lmax + 1 - m,) + x.shape)
        Q = np.zeros_like(P)
        P[0], Q[0] = pmm, qmm
        if lmax > m:
            c = math.sqrt(2 * m + 3)
            P[1], Q[1] = c * x * pmm, c * x * qmm
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[l - m] = a * (x * P[l - m - 1] - b * P[l - m - 2])
            Q[l - m] = a * (x * Q[l - m - 1] - b * Q[l - m - 2])
        return P, Q

    d = 1.0 / math.sqrt(_FOUR_PI)
    p00 = np.full(x.shape, d)
    P0, _ = column(0, p00, np.zeros(x.shape))
    # m = 1 column is needed for the m = 0 derivative
    d1 = -math.sqrt(1.5) * d
    if lmax >= 1:
        P1, Q1 = column(1, d1 * s, np.full(x.shape, d1))
    ls0 = np.arange(lmax + 1).reshape((-1,) + (1,) * x.ndim)
    dP0 = np.zeros_like(P0)
    if lmax >= 1:
        dP0[1:] = np.sqrt(ls0[1:] * (ls0[1:] + 1)) * P1
    yield 0, P0, dP0, np.zeros_like(P0)

    dm = d1
    qmm = np.full(x.shape, d1)  # P_mm / sin
    for m in range(1, mmax + 1):
        if m == 1:
            P, Q = P1, Q1
        else:
            dm_new = -math.sqrt((2 * m + 1) / (2 * m)) * dm
            qmm = qmm * s * (dm_new / dm)
            dm = dm_new
            P, Q = column(m, qmm * s, qmm)
        ls = np.arange(m, lmax + 1).reshape((-1,) + (1,) * x.ndim)
        c = np.sqrt((2 * ls + 1) * (ls * ls - m * m) / np.maximum(2 * ls - 1, 1))
        dP = ls * x * Q
        dP[1:] -= c[1:] * Q[:-1]
        yield m, P, dP, Q


def legendre_table(lmax: int, theta):
    """Full tables ``P[l, m]``, ``dP[l, m]`` and ``P/sin[l, m]`` for ``0 <= m <= l``."""
    theta = np.asarray(theta, dtype=float)
    shape = (lmax + 1, lmax + 1) + theta.shape
    P = np.zeros(shape)
    dP = np.zeros(shape)
    Q = np.zeros(shape)
    for m, Pm, dPm, Qm in legendre_columns(lmax, theta):
        P[m:, m], dP[m:, m], Q[m:, m] = Pm, dPm, Qm
    return P, dP, Q


def _check_lm(l, m):
    if l < 0 or abs(m) > l:
        raise IndexError(f"invalid spherical harmonic index (l={l}, m={m})")


def sph_harm_Y(l: int, m: int, theta, phi):
    """Orthonormal spherical harmonic ``Y_l^m`` (Condon-Shortley phase)."""
    _check_lm(l, m)
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    am = abs(m)
    for mm, P, _, _ in legendre_columns(l, theta, mmax=am):
        if mm == am:
            y = P[l - am] * np.exp(1j * am * phi)
    if m < 0:
        y = (-1) ** am * np.conj(y)
    return y[()] if y.ndim == 0 else y


class VSHKind(enum.Enum):
    GRAD = "grad"
    STAR_GRAD = "star_grad"


def vec_sph_harm(l: int, m: int, kind: VSHKind, theta, phi, normalized: bool = False):
    """Tangent vector harmonic in the ``(e_theta, e_phi)`` frame.

    ``GRAD`` is the surface gradient of ``Y_l^m`` and ``STAR_GRAD`` its
    rotation ``n x grad Y`` with ``n`` the outward normal.  The last axis of
    the result holds the two frame components.
    """
    _check_lm(l, m)
    if l == 0:
        raise IndexError("vector spherical harmonics need l >= 1")
    kind = VSHKind(kind)
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    am = abs(m)
    for mm, P, dP, Q in legendre_columns(l, theta, mmax=am):
        if mm == am:
            e = np.exp(1j * am * phi)
            g = np.stack([dP[l - am] * e, 1j * am * Q[l - am] * e], axis=-1)
    if m < 0:
        g = (-1) ** am * np.conj(g)
    if kind is VSHKind.STAR_GRAD:
        g = np.stack([-g[..., 1], g[..., 0]], axis=-1)
    if normalized:
        g = g / math.sqrt(l * (l + 1))
    return g
