"""Compiled inner kernels (numba, nogil) shared by the packing routines,
the public micro-kernel, and the engine's macro-kernel loop.

All kernels release the GIL so worker threads overlap for real. Summation
over the k dimension is strictly p = 0..k-1 everywhere, which is what
makes parallel and sequential executions bitwise identical.

Packed layouts (all float64):
  A block: micro-panels of m_r rows, stacked; inside a panel the storage
           is column-by-column (m_r values per column, kc_eff columns).
  B block: micro-panels of n_r columns, stacked; inside a panel the
           storage is row-by-row (n_r values per row, kc_eff rows).
Rows/columns beyond the source extent are zero-filled so tiles always
compute a full m_r x n_r accumulator.
"""

import numpy as np
from numba import njit

_JIT = dict(nogil=True, cache=True)


@njit(**_JIT)
def pack_a_slice(A, i0, p0, mc_eff, kc_eff, m_r, buf, panel_lo, panel_hi):
    """Pack micro-panels [panel_lo, panel_hi) of an mc_eff x kc_eff block
    of A (top-left corner (i0, p0)) into buf."""
    for q in range(panel_lo, panel_hi):
        base = q * m_r * kc_eff
        rows = mc_eff - q * m_r
        if rows > m_r:
            rows = m_r
        for col in range(kc_eff):
            off = base + col * m_r
            src_col = p0 + col
            for r in range(rows):
                buf[off + r] = A[i0 + q * m_r + r, src_col]
            for r in range(rows, m_r):
                buf[off + r] = 0.0
    return (panel_hi - panel_lo) * m_r * kc_eff


@njit(**_JIT)
def pack_b_slice(B, p0, j0, kc_eff, nc_eff, n_r, buf, panel_lo, panel_hi):
    """Pack micro-panels [panel_lo, panel_hi) of a kc_eff x nc_eff block
    of B (top-left corner (p0, j0)) into buf."""
    for q in range(panel_lo, panel_hi):
        base = q * n_r * kc_eff
        cols = nc_eff - q * n_r
        if cols > n_r:
            cols = n_r
        for row in range(kc_eff):
            off = base + row * n_r
            src_row = p0 + row
            for c in range(cols):
                buf[off + c] = B[src_row, j0 + q * n_r + c]
            for c in range(cols, n_r):
                buf[off + c] = 0.0
    return (panel_hi - panel_lo) * n_r * kc_eff


@njit(**_JIT)
def _busy_pad(a, ao, b, bo, k, slowdown):
    # Deterministic busy work: whole extra passes over the same panels,
    # same flop mix as the real update, result returned so it cannot be
    # optimized away. Cost ~ (slowdown - 1) * k inner iterations.
    busy = 0.0
    if slowdown > 1.0 and k > 0:
        extra = int(round((slowdown - 1.0) * k))
        while extra > 0:
            kk = extra if extra < k else k
            d0 = 0.0
            d1 = 0.0
            d2 = 0.0
            d3 = 0.0
            for p in range(kk):
                a0 = a[ao + 4 * p]
                a1 = a[ao + 4 * p + 1]
                a2 = a[ao + 4 * p + 2]
                a3 = a[ao + 4 * p + 3]
                b0 = b[bo + 4 * p]
                b1 = b[bo + 4 * p + 1]
                b2 = b[bo + 4 * p + 2]
                b3 = b[bo + 4 * p + 3]
                d0 += a0 * b0 + a0 * b1 + a0 * b2 + a0 * b3
                d1 += a1 * b0 + a1 * b1 + a1 * b2 + a1 * b3
                d2 += a2 * b0 + a2 * b1 + a2 * b2 + a2 * b3
                d3 += a3 * b0 + a3 * b1 + a3 * b2 + a3 * b3
            busy += d0 + d1 + d2 + d3
            extra -= kk
    return busy


@njit(**_JIT)
def tile_4x4(a, ao, b, bo, C, i0, j0, vr, vc, k, slowdown):
    """Register-blocked 4x4 tile update: full-tile accumulate over k
    rank-1 steps, then add the valid vr x vc corner into C."""
    c00 = 0.0; c01 = 0.0; c02 = 0.0; c03 = 0.0
    c10 = 0.0; c11 = 0.0; c12 = 0.0; c13 = 0.0
    c20 = 0.0; c21 = 0.0; c22 = 0.0; c23 = 0.0
    c30 = 0.0; c31 = 0.0; c32 = 0.0; c33 = 0.0
    for p in range(k):
        a0 = a[ao + 4 * p]
        a1 = a[ao + 4 * p + 1]
        a2 = a[ao + 4 * p + 2]
        a3 = a[ao + 4 * p + 3]
        b0 = b[bo + 4 * p]
        b1 = b[bo + 4 * p + 1]
        b2 = b[bo + 4 * p + 2]
        b3 = b[bo + 4 * p + 3]
        c00 += a0 * b0; c01 += a0 * b1; c02 += a0 * b2; c03 += a0 * b3
        c10 += a1 * b0; c11 += a1 * b1; c12 += a1 * b2; c13 += a1 * b3
        c20 += a2 * b0; c21 += a2 * b1; c22 += a2 * b2; c23 += a2 * b3
        c30 += a3 * b0; c31 += a3 * b1; c32 += a3 * b2; c33 += a3 * b3
    if vr > 0:
        if vc > 0: C[i0, j0] += c00
        if vc > 1: C[i0, j0 + 1] += c01
        if vc > 2: C[i0, j0 + 2] += c02
        if vc > 3: C[i0, j0 + 3] += c03
    if vr > 1:
        if vc > 0: C[i0 + 1, j0] += c10
        if vc > 1: C[i0 + 1, j0 + 1] += c11
        if vc > 2: C[i0 + 1, j0 + 2] += c12
        if vc > 3: C[i0 + 1, j0 + 3] += c13
    if vr > 2:
        if vc > 0: C[i0 + 2, j0] += c20
        if vc > 1: C[i0 + 2, j0 + 1] += c21
        if vc > 2: C[i0 + 2, j0 + 2] += c22
        if vc > 3: C[i0 + 2, j0 + 3] += c23
    if vr > 3:
        if vc > 0: C[i0 + 3, j0] += c30
        if vc > 1: C[i0 + 3, j0 + 1] += c31
        if vc > 2: C[i0 + 3, j0 + 2] += c32
        if vc > 3: C[i0 + 3, j0 + 3] += c33
    return _busy_pad(a, ao, b, bo, k, slowdown)


@njit(**_JIT)
def tile_generic(a, ao, b, bo, C, i0, j0, vr, vc, m_r, n_r, k, slowdown):
    """Fallback tile update for register blocks other than 4x4.
    Same per-element accumulation order as tile_4x4."""
    acc = np.zeros((m_r, n_r))
    for p in range(k):
        for r in range(m_r):
            av = a[ao + p * m_r + r]
            for c in range(n_r):
                acc[r, c] += av * b[bo + p * n_r + c]
    for r in range(vr):
        for c in range(vc):
            C[i0 + r, j0 + c] += acc[r, c]
    busy = 0.0
    if slowdown > 1.0 and k > 0:
        extra = int(round((slowdown - 1.0) * k))
        while extra > 0:
            kk = extra if extra < k else k
            d = 0.0
            for p in range(kk):
                for r in range(m_r):
                    av = a[ao + p * m_r + r]
                    for c in range(n_r):
                        d += av * b[bo + p * n_r + c]
            busy += d
            extra -= kk
    return busy


@njit(**_JIT)
def macro_tiles(a_buf, b_buf, C, i_c, j_c, mc_eff, nc_eff, kc_eff,
                m_r, n_r, jr_lo, jr_hi, ir_lo, ir_hi, slowdown):
    """Loops 4 and 5 over one packed (A, B) block pair: every micro-tile
    with panel indices j_r in [jr_lo, jr_hi) x i_r in [ir_lo, ir_hi).

    Returns (micro-kernel invocations, busy-pad checksum).
    """
    invocations = 0
    busy = 0.0
    use_4x4 = m_r == 4 and n_r == 4
    for jr in range(jr_lo, jr_hi):
        bo = jr * n_r * kc_eff
        j0 = j_c + jr * n_r
        vc = nc_eff - jr * n_r
        if vc > n_r:
            vc = n_r
        for ir in range(ir_lo, ir_hi):
            ao = ir * m_r * kc_eff
            i0 = i_c + ir * m_r
            vr = mc_eff - ir * m_r
            if vr > m_r:
                vr = m_r
            if use_4x4:
                busy += tile_4x4(a_buf, ao, b_buf, bo, C, i0, j0,
                                 vr, vc, kc_eff, slowdown)
            else:
                busy += tile_generic(a_buf, ao, b_buf, bo, C, i0, j0,
                                     vr, vc, m_r, n_r, kc_eff, slowdown)
            invocations += 1
    return invocations, busy


def warm_up():
    """Force-compile the jitted kernels (cached across sessions)."""
    A = np.zeros((5, 5), order="F")
    buf = np.zeros(64)
    pack_a_slice(A, 0, 0, 5, 5, 4, buf, 0, 2)
    pack_b_slice(A, 0, 0, 5, 5, 4, buf, 0, 2)
    C = np.zeros((8, 8), order="F")
    a = np.zeros(16)
    b = np.zeros(16)
    tile_4x4(a, 0, b, 0, C, 0, 0, 4, 4, 4, 1.0)
    tile_generic(a, 0, b, 0, C, 0, 0, 2, 2, 2, 2, 4, 1.0)
    macro_tiles(a, b, C, 0, 0, 4, 4, 4, 4, 4, 0, 1, 0, 1, 1.0)
