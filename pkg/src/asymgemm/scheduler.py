"""Work-plan construction for every scheduling policy: symmetric and
ratio-based static partitioning across clusters, cache-aware tree
harmonization for the shared-buffer case, and the dynamic row-block
dispatcher with per-cluster leaders.
"""

from __future__ import annotations

import math
import os
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .model import (
    CacheConfig,
    ClusterSpec,
    ControlTree,
    CoreClass,
    ELEM_BYTES,
    Range,
    SchedulingPolicy,
    Topology,
    max_mc_for_l2,
    validate_control_tree,
)

ENV_PREFIX = "ASYMGEMM_"
HARMONIZE_SAFETY = 0.5  # fraction of slow L2 granted to the packed A block


class PlanError(ValueError):
    """A scheduling request that cannot be turned into a valid plan."""


def split_even(extent: int, parts: int, align: int = 1) -> list[Range]:
    """Partition [0, extent) into ``parts`` contiguous ranges whose
    interior boundaries are multiples of ``align`` and whose sizes differ
    by at most one align unit.

    Whole units go to the lowest-indexed parts; when the extent is
    ragged (not a multiple of align) the part holding the short tail is
    topped up with one of the spare units so the size spread stays
    within align."""
    if parts < 1:
        raise ValueError("parts must be >= 1")
    if align < 1:
        raise ValueError("align must be >= 1")
    units = -(-extent // align)
    base, rem = divmod(units, parts)
    counts = [base + (1 if i < rem else 0) for i in range(parts)]
    if rem and base >= 1 and extent % align:
        counts[0] -= 1
        counts[-1] += 1
    ranges = []
    start = 0
    for count in counts:
        end = min(start + count * align, extent)
        ranges.append(Range(start, end))
        start = end
    return ranges

def split_ratio(extent: int, ratio, align: int = 1) -> tuple[Range, Range]:
    """Partition [0, extent) between a fast part [0, s) and a slow part
    [s, extent): s is the grid boundary (multiple of align, or the
    extent itself) nearest to extent * R/(R+1), ties rounding toward the
    fast part. Ratio 1 reproduces split_even with two parts."""
    R = Fraction(ratio)
    if R <= 0:
        raise ValueError("ratio must be positive")
    if align < 1:
        raise ValueError("align must be >= 1")
    target = Fraction(extent) * R / (R + 1)
    lo = min((int(target) // align) * align, extent)
    hi = min(lo + align, extent)
    # nearest boundary wins; a tie goes up, toward the fast part
    s = lo if abs(lo - target) < abs(hi - target) else hi
    return Range(0, s), Range(s, extent)


def harmonize_trees(fast_cfg: CacheConfig, slow_cfg: CacheConfig,
                    coarse_loop: Optional[int],
                    override_mc_slow: Optional[int],
                    slow_cluster: ClusterSpec) -> tuple[CacheConfig, CacheConfig]:
    """Reconcile per-class blocking parameters for dual-tree execution.

    Splitting across loop 1 gives each cluster private packed buffers, so
    nothing needs to change. Splitting across loop 3 shares the packed B
    buffer, which forces a common k_c; the slow cluster then needs a
    smaller m_c so its packed A block still fits its L2 (pass
    ``override_mc_slow`` to pin an empirically tuned value, otherwise a
    capacity bound at half the L2 is used)."""
    if coarse_loop != 3:
        return fast_cfg, slow_cfg
    if override_mc_slow is not None:
        mc = override_mc_slow
    else:
        mc = max_mc_for_l2(fast_cfg.k_c, slow_cluster.l2_bytes, ELEM_BYTES,
                           slow_cfg.m_r, HARMONIZE_SAFETY)
    if mc <= 0:
        raise PlanError(
            f"no feasible slow m_c for shared k_c={fast_cfg.k_c}: packed A "
            f"cannot fit {HARMONIZE_SAFETY:.0%} of a {slow_cluster.l2_bytes}-byte L2")
    return fast_cfg, slow_cfg.with_values(k_c=fast_cfg.k_c, m_c=mc)


class ChunkDispatcher:
    """Shared cursor over the loop-3 iteration space [0, extent).

    ``next_chunk`` atomically hands out the next row block, sized by the
    caller's core class (its tree's m_c); the final chunk may be
    truncated. Returns None once the space is exhausted."""

    def __init__(self, extent: int, chunk_sizes: Mapping[CoreClass, int]):
        if extent < 0:
            raise ValueError("extent must be >= 0")
        for cls, size in chunk_sizes.items():
            if size < 1:
                raise ValueError(f"chunk size for {cls.value} must be >= 1")
        self.extent = extent
        self.chunk_sizes = dict(chunk_sizes)
        self._next = 0
        self._lock = threading.Lock()

    def next_chunk(self, core_class: CoreClass) -> Optional[Range]:
        size = self.chunk_sizes[core_class]
        with self._lock:
            if self._next >= self.extent:
                return None
            begin = self._next
            end = min(begin + size, self.extent)
            self._next = end
        return Range(begin, end)

    @property
    def cursor(self) -> int:
        with self._lock:
            return self._next


@dataclass(frozen=True)
class ThreadSlot:
    """One worker's identity within a plan."""

    thread_id: int
    cluster_index: int
    core_class: CoreClass
    is_leader: bool
    fine4_index: int  # position within the cluster's loop-4 split
    fine5_index: int  # position within the cluster's loop-5 split


@dataclass(frozen=True)
class ClusterPlan:
    """Per-cluster slice of a WorkPlan."""

    index: int
    spec: ClusterSpec
    tree: ControlTree  # effective tree (harmonized config, actual degrees)
    thread_ids: tuple[int, ...]
    col_range: Range          # loop-1 ownership
    row_range: Optional[Range]  # loop-3 ownership; None under dynamic dispatch
    d4: int
    d5: int

    @property
    def leader_id(self) -> int:
        return self.thread_ids[0]


@dataclass(frozen=True)
class WorkPlan:
    policy: SchedulingPolicy
    m: int
    n: int
    k: int
    coarse_loop: Optional[int]
    clusters: tuple[ClusterPlan, ...]
    threads: tuple[ThreadSlot, ...]
    dynamic: bool
    chunk_sizes: Optional[Mapping[CoreClass, int]]  # dynamic policies only
    ratio: Optional[Fraction]

    @property
    def n_threads(self) -> int:
        return len(self.threads)

    @property
    def shared_b(self) -> bool:
        """True when one packed-B buffer is shared by every thread
        (anything but a loop-1 coarse split across two clusters)."""
        return not (self.coarse_loop == 1 and len(self.clusters) > 1)

    def cluster_of(self, thread_id: int) -> ClusterPlan:
        return self.clusters[self.threads[thread_id].cluster_index]

    def make_dispatcher(self) -> ChunkDispatcher:
        if not self.dynamic:
            raise PlanError("plan is static; no dispatcher")
        return ChunkDispatcher(self.m, self.chunk_sizes)


def fine_degrees(fine_loops, cores: int) -> tuple[int, int]:
    """Split ``cores`` ways of parallelism over the chosen fine loops.
    {4} and {5} take it all; {4, 5} factors cores with the larger factor
    on loop 4 (its iteration count n_c/n_r is usually the larger)."""
    fine = frozenset(fine_loops)
    if fine == frozenset({4}):
        return cores, 1
    if fine == frozenset({5}):
        return 1, cores
    if fine == frozenset({4, 5}):
        root = math.isqrt(cores)
        for d5 in range(root, 0, -1):
            if cores % d5 == 0:
                return cores // d5, d5
    raise PlanError(f"fine loops must be {{4}}, {{5}} or {{4,5}}, got {set(fine_loops)}")


def build_tree(cfg: CacheConfig, coarse_loop: Optional[int] = None,
               fine_loops=frozenset({4}), cluster_cores: int = 1,
               n_clusters: int = 1, ratio=Fraction(1)) -> ControlTree:
    """Construct a degree-consistent control tree for one thread group."""
    d4, d5 = fine_degrees(fine_loops, cluster_cores)
    degrees = {1: 1, 2: 1, 3: 1, 4: d4, 5: d5}
    if coarse_loop is not None:
        if coarse_loop not in (1, 3):
            raise PlanError(f"coarse loop must be 1 or 3, got {coarse_loop}")
        degrees[coarse_loop] = n_clusters
    return ControlTree(cache_config=cfg, loop_degrees=degrees,
                       coarse_loop=coarse_loop, fine_loops=frozenset(fine_loops),
                       ratio=Fraction(ratio))


def _check_tree(tree: ControlTree, topology: Topology, expected_threads: int,
                label: str) -> None:
    violations = validate_control_tree(tree, topology, thread_count=expected_threads)
    if violations:
        raise PlanError(f"{label} control tree invalid: " +
                        "; ".join(str(v) for v in violations))


def make_plan(policy: SchedulingPolicy, m: int, n: int, k: int,
              topology: Topology, trees: Sequence[ControlTree],
              ratio=None, override_mc_slow: Optional[int] = None) -> WorkPlan:
    """Turn a policy plus control tree(s) into per-thread work
    assignments.

    Static policies split the coarse loop (evenly, or by the fast:slow
    ratio); dynamic policies get a loop-3 chunk dispatcher (loop 1 is
    rejected for dynamic distribution: its stride n_c is too large to
    balance). Cache-aware policies run with both trees, harmonized when
    the packed-B buffer is shared; the others drive every thread with
    the first (fast) tree."""
    if m < 0 or n < 0 or k < 0:
        raise PlanError("matrix dimensions must be >= 0")
    trees = tuple(trees)
    n_clusters = len(topology.clusters)

    if policy.dual_tree:
        if len(trees) != 2:
            raise PlanError(f"{policy.value} needs two control trees, got {len(trees)}")
        if n_clusters != 2:
            raise PlanError(f"{policy.value} needs a two-cluster topology")
    else:
        if len(trees) != 1:
            raise PlanError(f"{policy.value} uses one control tree, got {len(trees)}")
    if policy is SchedulingPolicy.SINGLE_CLUSTER and n_clusters != 1:
        raise PlanError("single-cluster policy on a multi-cluster topology")
    if policy in (SchedulingPolicy.SAS, SchedulingPolicy.CA_SAS) and n_clusters != 2:
        raise PlanError(f"{policy.value} needs a two-cluster topology")
    if policy.dynamic and n_clusters != 2:
        raise PlanError(f"{policy.value} needs a two-cluster topology")

    coarse = trees[0].coarse_loop
    if policy.dynamic:
        if coarse == 1:
            raise PlanError(
                "dynamic policies cannot distribute loop 1: the n_c stride is "
                "too large to balance dynamically; use loop 3")
        coarse = 3
    if n_clusters == 1:
        coarse = None
    elif coarse is None:
        raise PlanError("two-cluster plans need a coarse loop (1 or 3)")

    if ratio is None:
        ratio = trees[0].ratio
    ratio = Fraction(ratio)
    if policy in (SchedulingPolicy.SAS, SchedulingPolicy.CA_SAS) and ratio <= 0:
        raise PlanError("asymmetric-static policies need a positive ratio")

    # Effective per-cluster cache configs.
    fine = trees[0].fine_loops
    if policy.dual_tree:
        fast_cfg, slow_cfg = trees[0].cache_config, trees[1].cache_config
        fast_cfg, slow_cfg = harmonize_trees(
            fast_cfg, slow_cfg, coarse, override_mc_slow, topology.slow)
        cfg_by_class = {CoreClass.FAST: fast_cfg, CoreClass.SLOW: slow_cfg}
    else:
        cfg_by_class = {c.core_class: trees[0].cache_config
                        for c in topology.clusters}

    if coarse == 3 and n_clusters == 2:
        cfgs = [cfg_by_class[c.core_class] for c in topology.clusters]
        if cfgs[0].k_c != cfgs[1].k_c:
            raise PlanError("shared packed-B buffer requires a common k_c")
        if cfgs[0].n_c != cfgs[1].n_c:
            raise PlanError("shared packed-B buffer requires a common n_c")

    # Coarse partitioning (static) in units of the register block.
    align = trees[0].cache_config.n_r if coarse == 1 else trees[0].cache_config.m_r
    extent = n if coarse == 1 else m
    by_class: dict[CoreClass, Range] = {}
    if coarse is not None and not policy.dynamic:
        if policy in (SchedulingPolicy.SAS, SchedulingPolicy.CA_SAS):
            fast_rng, slow_rng = split_ratio(extent, ratio, align)
            by_class = {CoreClass.FAST: fast_rng, CoreClass.SLOW: slow_rng}
        else:  # SSS
            parts = split_even(extent, n_clusters, align)
            ordered = sorted(topology.clusters,
                             key=lambda c: c.core_class is not CoreClass.FAST)
            by_class = {c.core_class: rng for c, rng in zip(ordered, parts)}

    clusters = []
    threads = []
    base = 0
    for idx, spec in enumerate(topology.clusters):
        cfg = cfg_by_class[spec.core_class]
        d4, d5 = fine_degrees(fine, spec.core_count)
        degrees = {1: 1, 2: 1, 3: 1, 4: d4, 5: d5}
        if coarse is not None:
            degrees[coarse] = n_clusters
        tree = ControlTree(cache_config=cfg, loop_degrees=degrees,
                           coarse_loop=coarse, fine_loops=fine, ratio=ratio)
        _check_tree(tree, topology, n_clusters * spec.core_count,
                    spec.core_class.value)
        col_range = Range(0, n)
        row_range: Optional[Range] = Range(0, m)
        if coarse == 1:
            col_range = by_class[spec.core_class]
        elif coarse == 3:
            row_range = None if policy.dynamic else by_class[spec.core_class]
        ids = tuple(range(base, base + spec.core_count))
        clusters.append(ClusterPlan(index=idx, spec=spec, tree=tree,
                                    thread_ids=ids, col_range=col_range,
                                    row_range=row_range, d4=d4, d5=d5))
        for t, tid in enumerate(ids):
            threads.append(ThreadSlot(
                thread_id=tid, cluster_index=idx, core_class=spec.core_class,
                is_leader=(t == 0), fine4_index=t // d5, fine5_index=t % d5))
        base += spec.core_count

    chunk_sizes = None
    if policy.dynamic:
        chunk_sizes = {cls: cfg.m_c for cls, cfg in cfg_by_class.items()}

    return WorkPlan(policy=policy, m=m, n=n, k=k, coarse_loop=coarse,
                    clusters=tuple(clusters), threads=tuple(threads),
                    dynamic=policy.dynamic, chunk_sizes=chunk_sizes,
                    ratio=ratio)


def parse_ratio(text: str) -> Fraction:
    """Accept '3', '5/2' or '2.5' as a fast:slow performance ratio."""
    text = text.strip()
    try:
        if "/" in text:
            return Fraction(text)
        if "." in text:
            return Fraction(text).limit_denominator(1000)
        return Fraction(int(text))
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"cannot parse ratio {text!r}")


def parse_fine_loops(text: str) -> frozenset[int]:
    mapping = {"4": frozenset({4}), "5": frozenset({5}),
               "45": frozenset({4, 5}), "4,5": frozenset({4, 5})}
    if text not in mapping:
        raise ValueError(f"fine loops must be one of 4, 5, 45; got {text!r}")
    return mapping[text]


def env_overrides(environ=None) -> dict:
    """Read the scheduler knobs from the environment. Only keys that are
    set appear in the result; values are already parsed."""
    env = os.environ if environ is None else environ
    out: dict = {}
    if ENV_PREFIX + "POLICY" in env:
        out["policy"] = SchedulingPolicy(env[ENV_PREFIX + "POLICY"].lower())
    if ENV_PREFIX + "RATIO" in env:
        out["ratio"] = parse_ratio(env[ENV_PREFIX + "RATIO"])
    if ENV_PREFIX + "THREADS_FAST" in env:
        out["threads_fast"] = int(env[ENV_PREFIX + "THREADS_FAST"])
    if ENV_PREFIX + "THREADS_SLOW" in env:
        out["threads_slow"] = int(env[ENV_PREFIX + "THREADS_SLOW"])
    if ENV_PREFIX + "COARSE" in env:
        out["coarse"] = int(env[ENV_PREFIX + "COARSE"])
    if ENV_PREFIX + "FINE" in env:
        out["fine"] = parse_fine_loops(env[ENV_PREFIX + "FINE"])
    if ENV_PREFIX + "FAST_CONFIG" in env:
        out["fast_config"] = env[ENV_PREFIX + "FAST_CONFIG"]
    if ENV_PREFIX + "SLOW_CONFIG" in env:
        out["slow_config"] = env[ENV_PREFIX + "SLOW_CONFIG"]
    return out
