"""The innermost computational unit: accumulate one m_r x n_r tile of C
as k rank-1 updates over a packed A micro-panel and a packed B
micro-panel. A full tile is accumulated from zero and only the valid
corner is added into C, so padded lanes contribute nothing.

The 4x4 shape gets a register-blocked body; other shapes fall back to a
generic compiled loop. The ``slowdown`` knob busy-pads the call with
extra passes of the same flop mix (never touching C), which lets a
thread emulate a slower core class deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class MicroTileView:
    """Where a micro-kernel writes: the tile of C whose top-left corner
    is (row0, col0), clipped to valid_rows x valid_cols."""

    c: np.ndarray  # 2-D float64, unit row stride (column-major view)
    row0: int
    col0: int
    valid_rows: int
    valid_cols: int

    def __post_init__(self):
        if self.valid_rows < 1 or self.valid_cols < 1:
            raise ValueError("dispatched tiles must have at least one valid row/col")
        if self.row0 + self.valid_rows > self.c.shape[0] or \
           self.col0 + self.valid_cols > self.c.shape[1]:
            raise ValueError("tile exceeds C bounds")


def microkernel(a_panel: np.ndarray, b_panel: np.ndarray, tile: MicroTileView,
                k: int, m_r: int = 4, n_r: int = 4,
                slowdown: float = 1.0) -> float:
    """Update C[tile] += A_panel . B_panel over k rank-1 steps.

    ``a_panel`` holds m_r values per step (column-by-column), ``b_panel``
    n_r values per step (row-by-row), exactly as produced by the packing
    routines. k = 0 leaves C untouched. Returns the busy-pad checksum
    (0.0 unless slowdown > 1).
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if len(a_panel) < m_r * k or len(b_panel) < n_r * k:
        raise ValueError("panel shorter than m_r*k / n_r*k")
    a_panel = np.ascontiguousarray(a_panel, dtype=np.float64)
    b_panel = np.ascontiguousarray(b_panel, dtype=np.float64)
    if m_r == 4 and n_r == 4:
        return kernels.tile_4x4(a_panel, 0, b_panel, 0, tile.c,
                                tile.row0, tile.col0,
                                tile.valid_rows, tile.valid_cols, k, slowdown)
    return kernels.tile_generic(a_panel, 0, b_panel, 0, tile.c,
                                tile.row0, tile.col0,
                                tile.valid_rows, tile.valid_cols,
                                m_r, n_r, k, slowdown)
