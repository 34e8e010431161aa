"""Domain types for the blocked-GEMM framework: matrices, blocking
parameters, machine topology, control trees, and the validation rules
that decide whether a configuration is runnable.

Everything here is immutable after construction and safe to share
across threads read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Optional

import numpy as np

ELEM_BYTES = 8  # IEEE double precision throughout

LOOP_IDS = (1, 2, 3, 4, 5)
COARSE_LOOPS = (1, 3)  # loops that may split work across clusters
FINE_LOOPS = (4, 5)    # loops that may split work within a cluster


class CoreClass(Enum):
    FAST = "fast"
    SLOW = "slow"


class SchedulingPolicy(Enum):
    SINGLE_CLUSTER = "single"
    SSS = "sss"          # symmetric-static
    SAS = "sas"          # static-asymmetric (ratio-based)
    CA_SAS = "ca-sas"    # cache-aware static-asymmetric (dual trees)
    DAS = "das"          # dynamic-asymmetric, single tree
    CA_DAS = "ca-das"    # cache-aware dynamic-asymmetric (dual trees)

    @property
    def dual_tree(self) -> bool:
        return self in (SchedulingPolicy.CA_SAS, SchedulingPolicy.CA_DAS)

    @property
    def dynamic(self) -> bool:
        return self in (SchedulingPolicy.DAS, SchedulingPolicy.CA_DAS)


@dataclass(frozen=True)
class Range:
    """Half-open index interval [begin, end)."""

    begin: int
    end: int

    def __post_init__(self):
        if not (0 <= self.begin <= self.end):
            raise ValueError(f"invalid range [{self.begin}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.begin

    @property
    def empty(self) -> bool:
        return self.begin == self.end


class Matrix:
    """Column-major dense float64 matrix view with a leading dimension.

    Wraps a 2-D numpy array whose row stride is one element, so element
    (i, j) lives at flat offset i + j*ld of the underlying storage.
    Slicing with ``view`` shares the buffer.
    """

    __slots__ = ("array",)

    def __init__(self, array: np.ndarray):
        if array.ndim != 2 or array.dtype != np.float64:
            raise ValueError("Matrix requires a 2-D float64 array")
        if array.size and array.strides[0] != array.itemsize:
            raise ValueError("Matrix requires unit row stride (column-major storage)")
        self.array = array

    @classmethod
    def zeros(cls, m: int, n: int, ld: Optional[int] = None) -> "Matrix":
        ld = m if ld is None else ld
        if ld < m:
            raise ValueError(f"ld={ld} < m={m}")
        base = np.zeros((max(ld, 1), n), order="F")
        return cls(base[:m, :])

    @classmethod
    def from_2d(cls, values, ld: Optional[int] = None) -> "Matrix":
        values = np.asarray(values, dtype=np.float64)
        mat = cls.zeros(values.shape[0], values.shape[1], ld)
        mat.array[...] = values
        return mat

    @property
    def m(self) -> int:
        return self.array.shape[0]

    @property
    def n(self) -> int:
        return self.array.shape[1]

    @property
    def ld(self) -> int:
        if self.array.size == 0 or self.array.shape[1] < 2:
            return max(self.m, 1)
        return self.array.strides[1] // self.array.itemsize

    def view(self, i0: int, j0: int, rows: int, cols: int) -> "Matrix":
        if i0 < 0 or j0 < 0 or i0 + rows > self.m or j0 + cols > self.n:
            raise ValueError("view exceeds matrix bounds")
        return Matrix(self.array[i0:i0 + rows, j0:j0 + cols])

    def to_numpy(self) -> np.ndarray:
        return np.array(self.array, order="F", copy=True)

    def __repr__(self):
        return f"Matrix({self.m}x{self.n}, ld={self.ld})"


@dataclass(frozen=True)
class CacheConfig:
    """Blocking parameters, all in elements.

    Multiplicity of m_c/n_c over the register block is checked by
    ``validate_control_tree`` rather than at construction so that
    invalid configurations can be reported as data.
    """

    n_c: int
    k_c: int
    m_c: int
    m_r: int = 4
    n_r: int = 4

    def __post_init__(self):
        for name in ("n_c", "k_c", "m_c", "m_r", "n_r"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def with_values(self, **kw) -> "CacheConfig":
        current = dict(n_c=self.n_c, k_c=self.k_c, m_c=self.m_c,
                       m_r=self.m_r, n_r=self.n_r)
        current.update(kw)
        return CacheConfig(**current)


@dataclass(frozen=True)
class ClusterSpec:
    """One homogeneous group of cores sharing an L2 cache."""

    core_class: CoreClass
    core_count: int
    l1d_bytes: int
    l2_bytes: int
    cache_config: CacheConfig
    emulated_slowdown: float = 1.0  # >= 1.0; busy-pads micro-kernel calls

    def __post_init__(self):
        if self.core_count < 1:
            raise ValueError("core_count must be >= 1")
        if self.l1d_bytes <= 0 or self.l2_bytes <= 0:
            raise ValueError("cache sizes must be positive")
        if self.emulated_slowdown < 1.0:
            raise ValueError("emulated_slowdown must be >= 1.0")


@dataclass(frozen=True)
class Topology:
    """One or two clusters; two clusters must have distinct core classes."""

    clusters: tuple[ClusterSpec, ...]

    def __post_init__(self):
        if not (1 <= len(self.clusters) <= 2):
            raise ValueError("topology supports one or two clusters")
        if len(self.clusters) == 2:
            a, b = self.clusters
            if a.core_class == b.core_class:
                raise ValueError("two-cluster topology needs distinct core classes")
        if self.total_cores < 1:
            raise ValueError("topology needs at least one core")

    @property
    def total_cores(self) -> int:
        return sum(c.core_count for c in self.clusters)

    def cluster_by_class(self, core_class: CoreClass) -> ClusterSpec:
        for c in self.clusters:
            if c.core_class == core_class:
                return c
        raise KeyError(f"no {core_class.value} cluster in topology")

    @property
    def fast(self) -> ClusterSpec:
        if len(self.clusters) == 1:
            return self.clusters[0]
        return self.cluster_by_class(CoreClass.FAST)

    @property
    def slow(self) -> ClusterSpec:
        return self.cluster_by_class(CoreClass.SLOW)


def _default_degrees() -> Mapping[int, int]:
    return {i: 1 for i in LOOP_IDS}


@dataclass(frozen=True)
class ControlTree:
    """Per-thread-group execution configuration: blocking parameters,
    per-loop parallel degrees, and the coarse/fine loop selection."""

    cache_config: CacheConfig
    loop_degrees: Mapping[int, int] = field(default_factory=_default_degrees)
    coarse_loop: Optional[int] = None
    fine_loops: frozenset[int] = frozenset({4})
    ratio: Fraction = Fraction(1)

    def __post_init__(self):
        degrees = {i: 1 for i in LOOP_IDS}
        degrees.update(self.loop_degrees)
        object.__setattr__(self, "loop_degrees", degrees)
        object.__setattr__(self, "fine_loops", frozenset(self.fine_loops))

    def degree(self, loop_id: int) -> int:
        return self.loop_degrees[loop_id]

    @property
    def degree_product(self) -> int:
        return math.prod(self.loop_degrees[i] for i in LOOP_IDS)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


LOOP2_RACE = "LOOP2_RACE"
BAD_COARSE_LOOP = "BAD_COARSE_LOOP"
BAD_FINE_LOOP = "BAD_FINE_LOOP"
DEGREE_PRODUCT_MISMATCH = "DEGREE_PRODUCT_MISMATCH"
MC_NOT_MULTIPLE = "MC_NOT_MULTIPLE"
NC_NOT_MULTIPLE = "NC_NOT_MULTIPLE"


def validate_control_tree(tree: ControlTree, topology: Topology,
                          thread_count: Optional[int] = None) -> list[Violation]:
    """Check a control tree against the parallelizability rules.

    Returns a list of violations (empty means valid). ``thread_count``
    overrides the expected degree product; it defaults to the
    topology's total core count, which is right when one tree drives
    the whole machine. A per-cluster tree should pass its own group's
    thread count.
    """
    violations = []
    if tree.degree(2) > 1:
        violations.append(Violation(
            LOOP2_RACE,
            "loop 2 cannot be parallelized: concurrent threads would "
            f"update the same elements of C (degree={tree.degree(2)})"))
    if tree.coarse_loop is not None and tree.coarse_loop not in COARSE_LOOPS:
        violations.append(Violation(
            BAD_COARSE_LOOP,
            f"coarse loop must be 1, 3 or none, got {tree.coarse_loop}"))
    bad_fine = sorted(set(tree.fine_loops) - set(FINE_LOOPS))
    if bad_fine:
        violations.append(Violation(
            BAD_FINE_LOOP,
            f"fine loops must be a subset of {{4, 5}}, got {bad_fine}"))
    expected = topology.total_cores if thread_count is None else thread_count
    if tree.degree_product != expected:
        violations.append(Violation(
            DEGREE_PRODUCT_MISMATCH,
            f"product of loop degrees is {tree.degree_product}, "
            f"expected {expected} threads"))
    cfg = tree.cache_config
    if cfg.m_c % cfg.m_r != 0:
        violations.append(Violation(
            MC_NOT_MULTIPLE, f"m_c={cfg.m_c} is not a multiple of m_r={cfg.m_r}"))
    if cfg.n_c % cfg.n_r != 0:
        violations.append(Violation(
            NC_NOT_MULTIPLE, f"n_c={cfg.n_c} is not a multiple of n_r={cfg.n_r}"))
    return violations


@dataclass(frozen=True)
class FitReport:
    """Cache residency check for one cluster: does a k_c x n_r panel of
    packed B fit in L1d, and an m_c x k_c packed block of A in L2?"""

    br_bytes: int
    ac_bytes: int
    br_fits: bool
    ac_fits: bool

    @property
    def fits(self) -> bool:
        return self.br_fits and self.ac_fits


def cache_fit_check(cfg: CacheConfig, cluster: ClusterSpec,
                    elem_bytes: int = ELEM_BYTES,
                    occupancy: float = 1.0) -> FitReport:
    """Plain capacity check of the streamed working sets against the
    cluster's caches. ``occupancy`` scales usable capacity (associativity
    slack); 1.0 means full capacity."""
    if elem_bytes < 1:
        raise ValueError("elem_bytes must be >= 1")
    if not (0.0 < occupancy <= 1.0):
        raise ValueError("occupancy must be in (0, 1]")
    br_bytes = cfg.k_c * cfg.n_r * elem_bytes
    ac_bytes = cfg.m_c * cfg.k_c * elem_bytes
    return FitReport(
        br_bytes=br_bytes,
        ac_bytes=ac_bytes,
        br_fits=br_bytes <= occupancy * cluster.l1d_bytes,
        ac_fits=ac_bytes <= occupancy * cluster.l2_bytes,
    )


def max_mc_for_l2(k_c: int, l2_bytes: int, elem_bytes: int,
                  m_r: int, safety: float) -> int:
    """Largest multiple of m_r such that an m_c x k_c block stays within
    ``safety`` of the L2 capacity. Returns 0 when not even one m_r-row
    strip fits."""
    if k_c < 1:
        raise ValueError("k_c must be >= 1")
    limit = int(math.floor(safety * l2_bytes / (k_c * elem_bytes)))
    return (limit // m_r) * m_r
