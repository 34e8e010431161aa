"""Reference matrix products used to check the blocked engine. These
never touch the packing or kernel code paths.
"""

from __future__ import annotations

import numpy as np


def matmul_outer(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """C = A . B as an explicit loop of rank-1 updates, p = 0..k-1.

    The per-element operation sequence (multiply, then add, in ascending
    p) matches the plain triple loop with k innermost.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    m, k = A.shape
    k2, n = B.shape
    if k != k2:
        raise ValueError(f"conformance: A is {m}x{k}, B is {k2}x{n}")
    C = np.zeros((m, n))
    for p in range(k):
        C += np.multiply.outer(A[:, p], B[p, :])
    return C


def matmul_loops(A, B) -> np.ndarray:
    """Scalar triple loop. Only for tiny problems; used to cross-check
    matmul_outer."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    m, k = A.shape
    _, n = B.shape
    C = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += A[i, p] * B[p, j]
            C[i, j] = acc
    return C


def relative_error(C: np.ndarray, ref: np.ndarray) -> float:
    """Max elementwise |C - ref| / max(|ref|, 1)."""
    denom = np.maximum(np.abs(ref), 1.0)
    return float(np.max(np.abs(C - ref) / denom)) if C.size else 0.0


def gemm_tolerance(k: int) -> float:
    """Elementwise relative bound for a k-long accumulation."""
    return 4.0 * max(k, 1) * np.finfo(np.float64).eps
