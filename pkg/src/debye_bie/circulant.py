"""Rotation-invariant linear operators on surfaces of revolution.

On a grid with ``nv`` equispaced azimuthal nodes any operator that commutes
with rotation about the symmetry axis is block circulant: the block coupling
azimuthal index ``a`` (target) to ``b`` (source) depends only on
``(b - a) mod nv``.  Such an operator is stored through its azimuthal Fourier
blocks

    A_m = sum_q a_q exp(2 pi i m q / nv),

one dense ``(nu * cout, nu * cin)`` matrix per mode ``m``.  Fields are arrays of
shape ``(nu * nv,)`` (one channel) or ``(nu * nv, c)`` ordered with the profile
index ``iu`` slowest; inside a block, rows and columns are ordered ``(iu, c)``.
With ``xh = fft(x)`` along the azimuth, ``yh[m] = A_m xh[m]`` and
``y = ifft(yh)``.
"""

from __future__ import annotations

import numpy as np

__all__ = ["BlockCirculant"]


class BlockCirculant:
    """Block-circulant operator stored as azimuthal mode blocks."""

    __array_priority__ = 100  # make ``scalar * op`` dispatch to ``__rmul__``

    def __init__(self, modes, nu: int, cout: int, cin: int):
        modes = np.asarray(modes, dtype=complex)
        if modes.ndim != 3 or modes.shape[1:] != (nu * cout, nu * cin):
            raise ValueError(f"mode blocks of shape {modes.shape} do not match "
                             f"nu={nu}, cout={cout}, cin={cin}")
        self.modes = modes
        self.nu, self.cout, self.cin = nu, cout, cin

    # -- construction -------------------------------------------------------

    @property
    def nv(self) -> int:
        return self.modes.shape[0]

    @classmethod
    def from_rows(cls, rows, nu: int, cout: int, cin: int):
        """Build from the rows of the targets at azimuthal index 0.

        ``rows`` has shape ``(nu, cout, nu, nv, cin)``: entry
        ``[i, co, j, b, ci]`` couples source ``(j, b, ci)`` to target
        ``(i, 0, co)``.
        """
        rows = np.asarray(rows, dtype=complex)
        nv = rows.shape[3]
        a = rows.transpose(3, 0, 1, 2, 4).reshape(nv, nu * cout, nu * cin)
        return cls(nv * np.fft.ifft(a, axis=0), nu, cout, cin)

    @classmethod
    def pointwise(cls, mats, nv: int):
        """Operator acting node by node with the ``(cout, cin)`` matrix ``mats[iu]``."""
        mats = np.asarray(mats, dtype=complex)
        nu, cout, cin = mats.shape
        blk = np.zeros((nu, cout, nu, cin), dtype=complex)
        idx = np.arange(nu)
        blk[idx, :, idx, :] = mats
        blk = blk.reshape(nu * cout, nu * cin)
        return cls(np.broadcast_to(blk, (nv,) + blk.shape).copy(), nu, cout, cin)

    @classmethod
    def identity(cls, nu: int, nv: int, c: int = 1):
        return cls.pointwise(np.broadcast_to(np.eye(c), (nu, c, c)), nv)

    @classmethod
    def zeros(cls, nu: int, nv: int, cout: int, cin: int):
        return cls(np.zeros((nv, nu * cout, nu * cin), dtype=complex), nu, cout, cin)

    @classmethod
    def from_mode_function(cls, fn, nu: int, nv: int, cout: int, cin: int):
        """Assemble from ``fn(m_index, m_signed) -> (nu * cout, nu * cin)`` matrix."""
        ms = np.rint(np.fft.fftfreq(nv) * nv).astype(int)
        modes = np.empty((nv, nu * cout, nu * cin), dtype=complex)
        for idx, m in enumerate(ms):
            modes[idx] = fn(idx, int(m))
        return cls(modes, nu, cout, cin)

    @staticmethod
    def block(rows):
        """Combine a nested list of operators into one acting on stacked channels.

        ``rows[i][j]`` maps input channel group ``j`` to output group ``i``;
        ``None`` stands for a zero block.
        """
        ref = next(op for row in rows for op in row if op is not None)
        nu, nv = ref.nu, ref.nv
        couts = [next(op.cout for op in row if op is not None) for row in rows]
        cins = [next(rows[i][j].cin for i in range(len(rows)) if rows[i][j] is not None)
                for j in range(len(rows[0]))]
        out = np.zeros((nv, nu, sum(couts), nu, sum(cins)), dtype=complex)
        r0 = 0
        for i, row in enumerate(rows):
            c0 = 0
            for j, op in enumerate(row):
                if op is not None:
                    if (op.cout, op.cin) != (couts[i], cins[j]) or op.nu != nu or op.nv != nv:
                        raise ValueError("inconsistent block sizes")
                    out[:, :, r0:r0 + couts[i], :, c0:c0 + cins[j]] = op._blocks5()
                c0 += cins[j]
            r0 += couts[i]
        co, ci = sum(couts), sum(cins)
        return BlockCirculant(out.reshape(nv, nu * co, nu * ci), nu, co, ci)

    def _blocks5(self):
        return self.modes.reshape(self.nv, self.nu, self.cout, self.nu, self.cin)

    def sub(self, out_channels, in_channels):
        """Restriction to a subset of output and input channels."""
        b = self._blocks5()[:, :, list(out_channels)][:, :, :, :, list(in_channels)]
        co, ci = len(out_channels), len(in_channels)
        return BlockCirculant(b.reshape(self.nv, self.nu * co, self.nu * ci), self.nu, co, ci)

    # -- algebra ------------------------------------------------------------

    def _check(self, other):
        if (self.nu, self.nv, self.cout, self.cin) != (other.nu, other.nv, other.cout, other.cin):
            raise ValueError("operator shapes differ")

    def __add__(self, other):
        self._check(other)
        return BlockCirculant(self.modes + other.modes, self.nu, self.cout, self.cin)

    def __sub__(self, other):
        self._check(other)
        return BlockCirculant(self.modes - other.modes, self.nu, self.cout, self.cin)

    def __neg__(self):
        return BlockCirculant(-self.modes, self.nu, self.cout, self.cin)

    def __mul__(self, c):
        if isinstance(c, BlockCirculant):
            return NotImplemented
        return BlockCirculant(self.modes * complex(c), self.nu, self.cout, self.cin)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, BlockCirculant):
            if other.cout != self.cin or other.nu != self.nu or other.nv != self.nv:
                raise ValueError("operators cannot be composed")
            return BlockCirculant(self.modes @ other.modes, self.nu, self.cout, other.cin)
        return self.apply(other)

    # -- action -------------------------------------------------------------

    def apply(self, x):
        """Apply to a field of shape ``(nu * nv,)`` or ``(nu * nv, cin)``.

        Single-channel results are returned as 1-d arrays.
        """
        x = np.asarray(x)
        n = self.nu * self.nv
        flat_in = x.ndim == 1
        if x.shape[0] != n or (flat_in and self.cin != 1) or (not flat_in and x.shape[1:] != (self.cin,)):
            raise ValueError(f"field of shape {x.shape} does not match the operator "
                             f"(nodes={n}, channels={self.cin})")
        xs = x.reshape(self.nu, self.nv, self.cin).transpose(1, 0, 2).reshape(self.nv, -1)
        yh = np.einsum("mij,mj->mi", self.modes, np.fft.fft(xs, axis=0))
        y = np.fft.ifft(yh, axis=0).reshape(self.nv, self.nu, self.cout).transpose(1, 0, 2)
        y = y.reshape(n, self.cout)
        return y[:, 0] if self.cout == 1 else y

    def dense(self) -> np.ndarray:
        """Full matrix in the node-major ordering ``(iu, iv, c)``."""
        nu, nv, co, ci = self.nu, self.nv, self.cout, self.cin
        a = np.fft.fft(self.modes, axis=0) / nv  # a[q]
        q = (np.arange(nv)[None, :] - np.arange(nv)[:, None]) % nv  # [a_target, b_source]
        blocks = a.reshape(nv, nu, co, nu, ci)[q]  # (a, b, i, co, j, ci)
        return blocks.transpose(2, 0, 3, 4, 1, 5).reshape(nu * nv * co, nu * nv * ci)

    def solve(self, y):
        """Solve ``A x = y`` mode by mode (square operators only)."""
        if self.cout != self.cin:
            raise ValueError("solve needs a square operator")
        y = np.asarray(y)
        flat = y.ndim == 1
        ys = y.reshape(self.nu, self.nv, self.cout).transpose(1, 0, 2).reshape(self.nv, -1)
        xh = np.linalg.solve(self.modes, np.fft.fft(ys, axis=0)[..., None])[..., 0]
        x = np.fft.ifft(xh, axis=0).reshape(self.nv, self.nu, self.cin).transpose(1, 0, 2)
        x = x.reshape(-1, self.cin)
        return x[:, 0] if self.cin == 1 else x

    def singular_values(self) -> np.ndarray:
        """Singular values of every mode block, shape ``(nv, min(rows, cols))``."""
        return np.linalg.svd(self.modes, compute_uv=False)

    def norm(self) -> float:
        """Spectral norm (the largest singular value over all mode blocks)."""
        return float(self.singular_values().max())
