"""Copy macro-blocks of A and B into contiguous micro-panel buffers with
zero padding at ragged edges, plus the inverse copies used as test
oracles. Layouts are documented in kernels.py.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import Matrix


def panels(extent: int, r: int) -> int:
    """Number of r-sized micro-panels covering ``extent`` (ceil div)."""
    return -(-extent // r)


@dataclass(frozen=True)
class PackedBlockA:
    mc_eff: int
    kc_eff: int
    m_r: int
    buffer: np.ndarray  # length panels(mc_eff, m_r) * m_r * kc_eff

    @property
    def n_panels(self) -> int:
        return panels(self.mc_eff, self.m_r)

    def panel(self, q: int) -> np.ndarray:
        size = self.m_r * self.kc_eff
        return self.buffer[q * size:(q + 1) * size]


@dataclass(frozen=True)
class PackedBlockB:
    kc_eff: int
    nc_eff: int
    n_r: int
    buffer: np.ndarray  # length panels(nc_eff, n_r) * n_r * kc_eff

    @property
    def n_panels(self) -> int:
        return panels(self.nc_eff, self.n_r)

    def panel(self, q: int) -> np.ndarray:
        size = self.n_r * self.kc_eff
        return self.buffer[q * size:(q + 1) * size]


def _as_array(view) -> np.ndarray:
    return view.array if isinstance(view, Matrix) else np.asarray(view, dtype=np.float64)


def pack_a(view, m_r: int) -> PackedBlockA:
    """Pack an mc_eff x kc_eff view of A into micro-panel order. The
    source is read through its strides and never modified; an empty view
    yields an empty buffer."""
    A = _as_array(view)
    mc_eff, kc_eff = A.shape
    buf = np.empty(panels(mc_eff, m_r) * m_r * kc_eff)
    if buf.size:
        kernels.pack_a_slice(A, 0, 0, mc_eff, kc_eff, m_r, buf,
                             0, panels(mc_eff, m_r))
    return PackedBlockA(mc_eff=mc_eff, kc_eff=kc_eff, m_r=m_r, buffer=buf)


def pack_b(view, n_r: int) -> PackedBlockB:
    """Pack a kc_eff x nc_eff view of B into micro-panel order (dual of
    pack_a with row-by-row panel interiors)."""
    B = _as_array(view)
    kc_eff, nc_eff = B.shape
    buf = np.empty(panels(nc_eff, n_r) * n_r * kc_eff)
    if buf.size:
        kernels.pack_b_slice(B, 0, 0, kc_eff, nc_eff, n_r, buf,
                             0, panels(nc_eff, n_r))
    return PackedBlockB(kc_eff=kc_eff, nc_eff=nc_eff, n_r=n_r, buffer=buf)


def unpack_a(p: PackedBlockA) -> Matrix:
    """Inverse of pack_a restricted to the non-padded region."""
    out = Matrix.zeros(p.mc_eff, p.kc_eff)
    A = out.array
    for q in range(p.n_panels):
        rows = min(p.m_r, p.mc_eff - q * p.m_r)
        base = q * p.m_r * p.kc_eff
        for col in range(p.kc_eff):
            off = base + col * p.m_r
            A[q * p.m_r:q * p.m_r + rows, col] = p.buffer[off:off + rows]
    return out


def unpack_b(p: PackedBlockB) -> Matrix:
    """Inverse of pack_b restricted to the non-padded region."""
    out = Matrix.zeros(p.kc_eff, p.nc_eff)
    B = out.array
    for q in range(p.n_panels):
        cols = min(p.n_r, p.nc_eff - q * p.n_r)
        base = q * p.n_r * p.kc_eff
        for row in range(p.kc_eff):
            off = base + row * p.n_r
            B[row, q * p.n_r:q * p.n_r + cols] = p.buffer[off:off + cols]
    return out
