"""Complex zeros of analytic functions by the argument principle.

A rectangle is subdivided until each box encloses at most one zero (counted by
the winding number of ``f`` along its boundary); the zero is then located
from the first contour moment and polished by Newton's method.  Boundary
integrals of ``f'/f`` use adaptive Gauss-Legendre panels.

The multipliers ``m_n(., l)`` grow like ``exp(2|Im k|)`` in the lower half
plane, so the helpers here work with ``m_n(k, l) exp(-2ik)``, which has the
same zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .specfun import bessel_table, hankel_poly
from .sphere_ops import multiplier_normal_with_derivative, multiplier_tangential

__all__ = [
    "SearchRegion",
    "ContourTooCloseError",
    "RootFindingError",
    "count_zeros",
    "find_roots",
    "first_roots_mn",
    "smallest_root_positive_re",
    "mn_function",
    "mn_bessel_factor_function",
    "mt_function",
    "hankel_poly_roots",
    "log_trend_correlation",
]

ArrayFn = Callable[[np.ndarray], np.ndarray]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class ContourTooCloseError(RuntimeError):
    """A zero sits on (or extremely near) the integration contour."""


class RootFindingError(RuntimeError):
    """Subdivision or Newton polishing failed; ``boxes`` lists the unresolved regions."""

    def __init__(self, msg: str, boxes=()):
        super().__init__(msg)
        self.boxes = list(boxes)


@dataclass(frozen=True)
class SearchRegion:
    re_min: float
    re_max: float
    im_min: float
    im_max: float
    max_depth: int = 40
    newton_tol: float = 1e-13
    puncture: float = 0.05

    def __post_init__(self):
        if not (self.re_min < self.re_max and self.im_min < self.im_max):
            raise ValueError("empty search region")

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))

    @property
    def size(self) -> float:
        return max(self.re_max - self.re_min, self.im_max - self.im_min)

    def contains(self, z: complex, pad: float = 0.0) -> bool:
        return (self.re_min - pad <= z.real <= self.re_max + pad
                and self.im_min - pad <= z.imag <= self.im_max + pad
                and abs(z) >= self.puncture - pad)

    def split(self, rng: np.random.Generator):
        """Four sub-boxes around a slightly jittered center."""
        w, h = self.re_max - self.re_min, self.im_max - self.im_min
        xm = self.re_min + w * (0.5 + 0.05 * rng.uniform(-1, 1))
        ym = self.im_min + h * (0.5 + 0.05 * rng.uniform(-1, 1))
        boxes = [
            replace(self, re_max=xm, im_max=ym),
            replace(self, re_min=xm, im_max=ym),
            replace(self, re_max=xm, im_min=ym),
            replace(self, re_min=xm, im_min=ym),
        ]
        return [b for b in boxes if not _inside_puncture(b)]

    def jittered(self, rng: np.random.Generator, amount: float) -> "SearchRegion":
        d = amount * self.size * rng.uniform(-1, 1, 4)
        return replace(self, re_min=self.re_min + d[0], re_max=self.re_max + d[1],
                       im_min=self.im_min + d[2], im_max=self.im_max + d[3])


def _inside_puncture(b: SearchRegion) -> bool:
    far = max(abs(complex(x, y)) for x in (b.re_min, b.re_max) for y in (b.im_min, b.im_max))
    return far < b.puncture


# ---------------------------------------------------------------------------
# contour pieces
# ---------------------------------------------------------------------------


def _contour(b: SearchRegion):
    """Boundary of the box minus the punctured disc, as ``(z(t), z'(t))`` pieces on [0, 1]."""
    corners = [complex(b.re_min, b.im_min), complex(b.re_max, b.im_min),
               complex(b.re_max, b.im_max), complex(b.re_min, b.im_max)]
    rho = b.puncture
    pieces = []
    for a, c in zip(corners, corners[1:] + corners[:1]):
        for s0, s1 in _outside_disc(a, c, rho):
            p0, p1 = a + s0 * (c - a), a + s1 * (c - a)
            pieces.append((lambda t, p0=p0, p1=p1: p0 + t * (p1 - p0),
                           lambda t, p0=p0, p1=p1: np.full_like(t, p1 - p0, dtype=complex)))
    for th0, th1 in _arc_inside_box(b, rho):
        # clockwise around the origin: the disc is excluded from the region
        pieces.append((lambda t, a=th0, c=th1: rho * np.exp(1j * (c + t * (a - c))),
                       lambda t, a=th0, c=th1: 1j * (a - c) * rho * np.exp(1j * (c + t * (a - c)))))
    return pieces


def _outside_disc(a: complex, c: complex, rho: float):
    """Sub-intervals of the segment ``a -> c`` lying outside ``|z| < rho``."""
    d = c - a
    A = abs(d) ** 2
    B = 2 * (a.real * d.real + a.imag * d.imag)
    C = abs(a) ** 2 - rho**2
    disc = B * B - 4 * A * C
    if disc <= 0:
        return [(0.0, 1.0)]
    r = math.sqrt(disc)
    s0, s1 = (-B - r) / (2 * A), (-B + r) / (2 * A)
    out = []
    if s0 > 0:
        out.append((0.0, min(s0, 1.0)))
    if s1 < 1:
        out.append((max(s1, 0.0), 1.0))
    return [(x, y) for x, y in out if y - x > 1e-14]


def _arc_inside_box(b: SearchRegion, rho: float):
    if b.re_min > rho or b.re_max < -rho or b.im_min > rho or b.im_max < -rho:
        return []
    angles = [-math.pi, math.pi]
    for x in (b.re_min, b.re_max):
        if abs(x) < rho:
            t = math.acos(x / rho)
            angles += [t, -t]
    for y in (b.im_min, b.im_max):
        if abs(y) < rho:
            t = math.asin(y / rho)
            angles += [t, math.copysign(math.pi, t) - t if t != 0 else math.pi]
    angles = sorted(set(angles))
    arcs = []
    for a0, a1 in zip(angles[:-1], angles[1:]):
        mid = rho * np.exp(1j * 0.5 * (a0 + a1))
        if b.re_min < mid.real < b.re_max and b.im_min < mid.imag < b.im_max:
            arcs.append((a0, a1))
    return arcs


# ---------------------------------------------------------------------------
# contour integration
# ---------------------------------------------------------------------------


def _richardson(f: ArrayFn) -> ArrayFn:
    def df(z):
        h = 1e-6 * (1.0 + np.abs(z))
        d1 = (f(z + h) - f(z - h)) / (2 * h)
        d2 = (f(z + h / 2) - f(z - h / 2)) / h
        return (4 * d2 - d1) / 3

    return df


def _log_derivative(f: ArrayFn, df: Optional[ArrayFn]):
    deriv = df if df is not None else _richardson(f)

    def g(z):
        fz = f(z)
        if np.any(fz == 0) or not np.all(np.isfinite(fz)):
            raise ContourTooCloseError("function vanishes or is not finite on the contour")
        return deriv(z) / fz

    return g


def _piece_nodes(pieces, npan):
    """Composite Gauss-Legendre nodes on every piece, ``npan[i]`` equal panels each."""
    zs, ws = [], []
    for (zf, dzf), n in zip(pieces, npan):
        t = ((np.arange(n)[:, None] + _GL_X[None, :]) / n).ravel()
        w = np.tile(_GL_W / n, n)
        zs.append(zf(t))
        ws.append(w * dzf(t))
    return np.concatenate(zs), np.concatenate(ws)


def _moments(g, box: SearchRegion, nmom: int = 2, tol: float = 1e-8, max_doublings: int = 10):
    """Contour moments ``(1/2 pi i) int (z - c)^p f'/f dz`` for ``p < nmom``.

    All quadrature nodes of the boundary are evaluated in one batch; the
    panel count is doubled until two successive rules agree.
    """
    c, s = box.center, 0.5 * box.size
    pieces = _contour(box)
    lengths = [abs(zf(np.array([1.0]))[0] - zf(np.array([0.0]))[0]) for zf, _ in pieces]
    npan = [max(1, int(math.ceil(L / 0.75))) for L in lengths]
    prev = None
    for _ in range(max_doublings):
        z, w = _piece_nodes(pieces, npan)
        vals = g(z) * w
        powers = ((z - c) / s)[None, :] ** np.arange(nmom)[:, None]
        cur = powers @ vals / (2j * math.pi)
        if prev is not None and abs(cur[0] - prev[0]) < tol:
            return cur * s ** np.arange(nmom)
        prev = cur
        npan = [2 * n for n in npan]
    raise ContourTooCloseError("contour quadrature did not converge")


def _winding(g, box: SearchRegion, nmom: int, rng, retries: int = 5):
    """Winding number and contour moments, jittering the box if the count is not an integer."""
    b = box
    for attempt in range(retries + 1):
        try:
            mom = _moments(g, b, nmom)
            n = mom[0].real
            if abs(n - round(n)) < 0.25 and abs(mom[0].imag) < 0.25:
                return int(round(n)), mom, b
        except ContourTooCloseError:
            pass
        b = box.jittered(rng, 1e-3 * (attempt + 1))
    raise ContourTooCloseError(f"contour of {box} passes too close to a zero")


def count_zeros(f: ArrayFn, region: SearchRegion, df: Optional[ArrayFn] = None,
                seed: int = 0) -> int:
    """Number of zeros of ``f`` inside ``region`` (minus the punctured disc)."""
    g = _log_derivative(f, df)
    n, _, _ = _winding(g, region, 1, np.random.default_rng(seed))
    return n


def _newton(f, df, z0, tol, maxit=60, mult: int = 1, noise_tol: float = 1e-8):
    """Newton polish; returns ``None`` on failure.

    Iteration stops at a relative step below ``tol``.  When rounding noise in
    ``f`` prevents that (steps stop shrinking), a step below ``noise_tol`` is
    accepted as converged.
    """
    z = complex(z0)
    last = math.inf
    for _ in range(maxit):
        fz = complex(f(np.array([z]))[0])
        if fz == 0:
            return z
        dz = complex(df(np.array([z]))[0])
        if dz == 0 or not math.isfinite(abs(dz)):
            return None
        step = mult * fz / dz
        size = abs(step) / (1.0 + abs(z))
        if size <= tol:
            return z - step
        if size > 0.5 * last:
            return z if last <= noise_tol else None
        z -= step
        last = size
    return None


def _roots_from_moments(g, box, n):
    """Approximate zeros from Newton's identities on the first ``n`` contour moments."""
    mom = _moments(g, box, n + 1)
    c, s = box.center, 0.5 * box.size
    p = mom / s ** np.arange(n + 1)  # power sums of (z - c)/s
    e = [1.0 + 0j]
    for k in range(1, n + 1):
        e.append(sum((-1) ** (i - 1) * e[k - i] * p[i] for i in range(1, k + 1)) / k)
    coeffs = [(-1) ** k * e[k] for k in range(n + 1)]
    return [c + s * r for r in np.roots(coeffs)]


def _clusters(pts, dist):
    groups: list[list[complex]] = []
    for z in pts:
        for gr in groups:
            if abs(z - gr[0]) < dist:
                gr.append(z)
                break
        else:
            groups.append([z])
    return groups


def _resolve_by_moments(f, deriv, g, box, n, tol):
    """Try to pin down all ``n`` zeros of a box at once; ``None`` if unsuccessful."""
    try:
        approx = _roots_from_moments(g, box, n)
    except ContourTooCloseError:
        return None
    out = []
    for gr in _clusters(approx, 1e-4 * box.size):
        m = len(gr)
        z = _newton(f, deriv, sum(gr) / m, tol, mult=m)
        if z is None or not box.contains(z, pad=1e-9 * (1 + box.size)):
            return None
        out += [z] * m
    if len(_clusters(out, 1e-8 * (1 + box.size))) != len(_clusters(approx, 1e-4 * box.size)):
        return None
    return out


def find_roots(f: ArrayFn, region: SearchRegion, df: Optional[ArrayFn] = None,
               seed: int = 0, min_size: float = 1e-7) -> list[complex]:
    """All zeros of ``f`` in ``region``, repeated according to multiplicity."""
    g = _log_derivative(f, df)
    deriv = df if df is not None else _richardson(f)
    rng = np.random.default_rng(seed)
    roots: list[complex] = []
    unresolved = []
    stack = [(region, 0)]
    while stack:
        box, depth = stack.pop()
        n, mom, box = _winding(g, box, 2, rng)
        if n == 0:
            continue
        if n == 1:
            z = _newton(f, deriv, box.center + mom[1], region.newton_tol)
            if z is not None and box.contains(z, pad=1e-9 * (1 + box.size)):
                roots.append(z)
                continue
        if n <= 4:
            zs = _resolve_by_moments(f, deriv, g, box, n, region.newton_tol)
            if zs is not None:
                roots += zs
                continue
        if box.size < min_size:
            roots += _roots_from_moments(g, box, n)
            continue
        if depth >= region.max_depth:
            unresolved.append(box)
            continue
        stack += [(b, depth + 1) for b in box.split(rng)]
    if unresolved:
        raise RootFindingError(f"{len(unresolved)} boxes unresolved", unresolved)
    return sorted(roots, key=lambda z: (z.real, z.imag))


def _dedupe(roots, dist=1e-8):
    out: list[complex] = []
    for r in sorted(roots, key=lambda z: (z.real, z.imag)):
        if not out or abs(r - out[-1]) > dist:
            out.append(r)
    return out


# ---------------------------------------------------------------------------
# multiplier roots
# ---------------------------------------------------------------------------


_CHUNK = 2048


def _memoized_pair(evaluate):
    """Split a joint ``k -> (f, f')`` evaluator into two callables.

    ``f'`` reuses the values computed by the most recent call of ``f`` at the
    same points, and large batches are evaluated in chunks to bound memory.
    """
    cache: dict = {}

    def both(k):
        k = np.asarray(k, dtype=complex)
        hit = cache.get("k")
        if hit is None or hit.shape != k.shape or not np.array_equal(hit, k):
            flat = k.ravel()
            parts = [evaluate(flat[i:i + _CHUNK]) for i in range(0, flat.size, _CHUNK)]
            cache["k"] = k.copy()
            cache["v"] = tuple(np.concatenate(p).reshape(k.shape) for p in zip(*parts))
        return cache["v"]

    return (lambda k: both(k)[0]), (lambda k: both(k)[1])


def mn_function(l: int):
    """``(f, f')`` for ``f(k) = m_n(k, l) exp(-2ik)``."""
    return _memoized_pair(lambda k: multiplier_normal_with_derivative(k, l, phase_scaled=True))


def _bessel_factor(k, l: int):
    kk_all = np.asarray(k, dtype=complex)
    f = np.empty(kk_all.shape, dtype=complex)
    df = np.empty(kk_all.shape, dtype=complex)
    lower = kk_all.imag < 0
    for mask, scaled in ((lower, True), (~lower, False)):
        if not np.any(mask):
            continue
        kk = kk_all[mask]
        tab = bessel_table(l, kk, exp_scaled=scaled)
        J, Jp = tab.jt[l], tab.jpt[l]
        Jpp = -2.0 / kk * Jp - (1.0 - l * (l + 1) / kk**2) * J
        q = (1j + kk) * J + 1j * kk * Jp
        dq = J + (2j + kk) * Jp + 1j * kk * Jpp
        # Only the phase of exp(-ik) / k^l is applied; the modulus is a
        # positive factor common to f and f', irrelevant for f'/f.
        ph = np.exp(-1j * (kk.real + l * np.angle(kk)))
        f[mask] = q * ph
        df[mask] = (dq - (1j + l / kk) * q) * ph
    return f, df


def mn_bessel_factor_function(l: int):
    """``(f, f')`` for the non-polynomial factor of ``m_n(., l)``.

    ``m_n(k, l) = k h_l(k) q(k)`` with ``q = (i + k) j_l + i k j_l'``; the
    zeros of ``m_n`` are those of ``h_l`` (roots of the Hankel polynomial)
    together with those of ``q`` away from ``k = 0``.  The analytic function
    behind the returned pair is ``F(k) = q(k) exp(-ik) / k^l``, which is
    entire and nonzero at the origin.  Both values are divided by a common
    positive factor that keeps them representable, so ``f'/f`` and the phase
    of ``f`` are exact while ``|f|`` is not that of ``F``.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    return _memoized_pair(lambda k: _bessel_factor(k, l))


def mt_function(l: int):
    """``f(k) = m_t(k, l)``; the derivative falls back to Richardson differences."""

    def f(k):
        return multiplier_tangential(k, l)

    return f, None


def hankel_poly_roots(l: int) -> np.ndarray:
    """Roots of the degree-``l`` polynomial factor ``p_l`` of ``h_l``."""
    return hankel_poly(l).roots()


def _mn_pair(l: int, exclude_hankel_zeros: bool):
    return mn_bessel_factor_function(l) if exclude_hankel_zeros else mn_function(l)


def first_roots_mn(l: int, count: int = 50, strip: float = 20.0, im_max: float = 0.5,
                   seed: int = 0, exclude_hankel_zeros: bool = False) -> list[complex]:
    """The ``count`` zeros of ``m_n(., l)`` with ``Re k >= 0`` of smallest modulus.

    Vertical strips ``Im k >= min(-8, lowest Hankel zero - 2)`` are searched
    left to right until enough zeros are found and every zero further right
    is farther away than the last kept one.  With ``exclude_hankel_zeros``
    only zeros of the non-polynomial factor are returned.
    """
    f, df = _mn_pair(l, exclude_hankel_zeros)
    prl = hankel_poly_roots(l)
    im_min = min(-8.0, float(prl.imag.min()) - 2.0) if l > 0 else -8.0
    found: list[complex] = []
    re0 = -0.5
    while True:
        reg = SearchRegion(re0, re0 + strip, im_min, im_max)
        found += [z for z in find_roots(f, reg, df, seed=seed) if z.real >= -1e-9]
        re0 += strip
        found = _dedupe(found)
        if len(found) >= count:
            found.sort(key=abs)
            if abs(found[count - 1]) <= re0:
                return found[:count]


def smallest_root_positive_re(l: int, seed: int = 0,
                              exclude_hankel_zeros: bool = False) -> complex:
    """Zero of ``m_n(., l)`` with ``Re k > 0`` of smallest modulus.

    For ``l >= 2`` this is a zero of ``h_l``, whose real part alternates
    between about 0.87 (even ``l``) and 1.74 (odd ``l``).  With
    ``exclude_hankel_zeros`` the search is restricted to the non-polynomial
    factor of ``m_n``.
    """
    if not 1 <= l <= 1000:
        raise ValueError("l must lie in [1, 1000]")
    f, df = _mn_pair(l, exclude_hankel_zeros)
    R = 2.0 + 0.5 * l
    while True:
        # The left edge sits off the imaginary axis, where odd degrees
        # carry a root; such roots are dropped by the filter below.
        reg = SearchRegion(-0.3, R, -R, 0.25)
        roots = [z for z in find_roots(f, reg, df, seed=seed)
                 if z.real > 1e-8 * (1.0 + abs(z))]
        if roots:
            best = min(roots, key=abs)
            if abs(best) <= R:
                return best
            R = abs(best) * 1.01
        else:
            R *= 1.5


def log_trend_correlation(roots) -> float:
    """Pearson correlation of ``Im k`` against ``-log(Re k) / 2``.

    Roots on the imaginary axis (``Re k`` at rounding level) are left out.
    """
    z = np.array([r for r in roots if r.real > 1e-8 * (1.0 + abs(r))])
    x = -0.5 * np.log(z.real)
    return float(np.corrcoef(x, z.imag)[0, 1])
