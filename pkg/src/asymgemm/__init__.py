"""Blocked multi-threaded GEMM with asymmetry-aware scheduling for
big.LITTLE-style multicore processors: a five-loop packed algorithm,
static and dynamic cluster-level work distribution, a cache-parameter
tuner, and a benchmark CLI with energy accounting.
"""

from .model import (
    CacheConfig,
    ClusterSpec,
    ControlTree,
    CoreClass,
    FitReport,
    Matrix,
    Range,
    SchedulingPolicy,
    Topology,
    Violation,
    cache_fit_check,
    max_mc_for_l2,
    validate_control_tree,
)
from .engine import (
    ConformanceError,
    ExecutionStats,
    GemmRequest,
    PackGroup,
    gemm_parallel,
    gemm_sequential,
    synchronize_packing,
)
from .scheduler import (
    ChunkDispatcher,
    PlanError,
    WorkPlan,
    build_tree,
    harmonize_trees,
    make_plan,
    split_even,
    split_ratio,
)
from .packing import PackedBlockA, PackedBlockB, pack_a, pack_b, unpack_a, unpack_b
from .microkernel import MicroTileView, microkernel
from .profiles import builtin_profile, builtin_topology, load_profile, save_profile

__version__ = "0.1.0"

__all__ = [
    "CacheConfig", "ClusterSpec", "ControlTree", "CoreClass", "FitReport",
    "Matrix", "Range", "SchedulingPolicy", "Topology", "Violation",
    "cache_fit_check", "max_mc_for_l2", "validate_control_tree",
    "ConformanceError", "ExecutionStats", "GemmRequest", "PackGroup",
    "gemm_parallel", "gemm_sequential", "synchronize_packing",
    "ChunkDispatcher", "PlanError", "WorkPlan", "build_tree",
    "harmonize_trees", "make_plan", "split_even", "split_ratio",
    "PackedBlockA", "PackedBlockB", "pack_a", "pack_b", "unpack_a", "unpack_b",
    "MicroTileView", "microkernel",
    "builtin_profile", "builtin_topology", "load_profile", "save_profile",
]
