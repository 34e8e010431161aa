"""Five-loop blocked GEMM (C += A.B) executed either sequentially or by
a pool of class-labeled worker threads following a WorkPlan.

Loop order is j_c (stride n_c) -> p_c (k_c) -> i_c (m_c) -> j_r (n_r)
-> i_r (m_r). B is packed once per (j_c, p_c) by the group of threads
that will read it, A once per (i_c, p_c) by the owning cluster; group
barriers separate packing from reading and reading from re-packing.
Every C element is accumulated by exactly one thread per k-block, in
ascending k order, so a parallel run is bitwise identical to a
sequential run of the same plan.

Worker threads are created per call and joined before return. When the
host exposes CPU affinity, each cluster is pinned to a disjoint CPU set
so cluster asymmetry (including emulated slowdown) behaves like separate
processors even on small machines.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .model import CoreClass, Matrix, Range, SchedulingPolicy, Topology, ControlTree
from .packing import panels
from .scheduler import ChunkDispatcher, PlanError, WorkPlan, make_plan, split_even

AFFINITY_ENV = "ASYMGEMM_NO_AFFINITY"


class ConformanceError(ValueError):
    pass


@dataclass(frozen=True)
class GemmRequest:
    """One C += A.B execution: operands plus scheduling configuration."""

    A: Matrix
    B: Matrix
    C: Matrix
    topology: Topology
    policy: SchedulingPolicy
    trees: tuple[ControlTree, ...]
    ratio: Optional[Fraction] = None
    override_mc_slow: Optional[int] = None

    def dims(self) -> tuple[int, int, int]:
        m, k = self.A.m, self.A.n
        k2, n = self.B.m, self.B.n
        mc, nc = self.C.m, self.C.n
        if k != k2 or m != mc or n != nc:
            raise ConformanceError(
                f"A is {m}x{k}, B is {k2}x{n}, C is {mc}x{nc}")
        return m, n, k


@dataclass
class ExecutionStats:
    """Per-run accounting used by the benchmark CLI and the tests."""

    wall_s: float = 0.0
    per_thread_invocations: list[int] = field(default_factory=list)
    per_thread_busy_s: list[float] = field(default_factory=list)
    per_thread_class: list[CoreClass] = field(default_factory=list)
    per_cluster_packed_a_bytes: list[int] = field(default_factory=list)
    per_cluster_packed_b_bytes: list[int] = field(default_factory=list)
    cross_cluster_barriers: int = 0
    busy_checksum: float = 0.0  # keeps emulated busy work observable

    @property
    def total_invocations(self) -> int:
        return sum(self.per_thread_invocations)

    def invocations_by_class(self) -> dict[CoreClass, int]:
        out: dict[CoreClass, int] = {}
        for cls, inv in zip(self.per_thread_class, self.per_thread_invocations):
            out[cls] = out.get(cls, 0) + inv
        return out


class PackGroup:
    """A group of threads that cooperatively fill one packed buffer.
    ``synchronize`` returns only when every member has arrived; a group
    of one is a no-op."""

    def __init__(self, parties: int, on_cycle=None):
        self.parties = parties
        self._barrier = threading.Barrier(parties, action=on_cycle) \
            if parties > 1 else None

    def synchronize(self, buffer_id=None) -> None:
        if self._barrier is not None:
            self._barrier.wait()

    def abort(self) -> None:
        if self._barrier is not None:
            self._barrier.abort()


def synchronize_packing(group: PackGroup, buffer_id) -> None:
    """Block until every member of ``group`` has finished its packing
    slice for ``buffer_id`` (i.e. has also called this)."""
    group.synchronize(buffer_id)


def expected_tile_count(plan: WorkPlan) -> int:
    """Micro-kernel invocations the plan must dispatch: one per
    (i_r, j_r) tile per k-block, summed over each cluster's coarse
    ownership. Coarse range boundaries are register-block aligned, so
    the per-cluster terms add up to the whole-problem tile count."""
    m, n, k = plan.m, plan.n, plan.k
    if m == 0 or n == 0 or k == 0:
        return 0
    if plan.dynamic:
        cfg = plan.clusters[0].tree.cache_config  # shared k_c and n_c
        return panels(m, cfg.m_r) * panels(n, cfg.n_r) * panels(k, cfg.k_c)
    total = 0
    for cl in plan.clusters:
        cfg = cl.tree.cache_config
        cols = len(cl.col_range)
        rows = len(cl.row_range)
        total += panels(rows, cfg.m_r) * panels(cols, cfg.n_r) * panels(k, cfg.k_c)
    return total


def _cluster_cpu_sets(plan: WorkPlan) -> Optional[list[set[int]]]:
    """Partition the process's CPUs across clusters, proportional to
    core counts, each cluster getting at least one CPU. None when the
    host cannot bind or has fewer CPUs than clusters."""
    if not hasattr(os, "sched_getaffinity") or os.environ.get(AFFINITY_ENV):
        return None
    try:
        cpus = sorted(os.sched_getaffinity(0))
    except OSError:
        return None
    counts = [c.spec.core_count for c in plan.clusters]
    if len(cpus) < len(counts):
        return None
    total = sum(counts)
    sets: list[set[int]] = []
    start = 0
    for i, cnt in enumerate(counts):
        left = len(counts) - i - 1
        size = max(1, round(len(cpus) * cnt / total))
        size = min(size, len(cpus) - start - left)
        sets.append(set(cpus[start:start + size]))
        start += size
    sets[-1] |= set(cpus[start:])
    return sets


class _Shared:
    """Mutable state shared by one parallel run's workers."""

    def __init__(self, plan: WorkPlan, dims):
        m, n, k = dims
        self.plan = plan
        nclusters = len(plan.clusters)
        self.a_bufs = []
        for cl in plan.clusters:
            cfg = cl.tree.cache_config
            self.a_bufs.append(np.empty(panels(cfg.m_c, cfg.m_r) * cfg.m_r * cfg.k_c))
        if plan.shared_b:
            cfg = plan.clusters[0].tree.cache_config
            shared = np.empty(panels(cfg.n_c, cfg.n_r) * cfg.n_r * cfg.k_c)
            self.b_bufs = [shared] * nclusters
        else:
            self.b_bufs = []
            for cl in plan.clusters:
                cfg = cl.tree.cache_config
                self.b_bufs.append(
                    np.empty(panels(cfg.n_c, cfg.n_r) * cfg.n_r * cfg.k_c))

        self.cross_barriers = 0

        def _count_cross():
            self.cross_barriers += 1

        self.cluster_groups = [PackGroup(c.spec.core_count) for c in plan.clusters]
        if plan.shared_b and nclusters > 1:
            self.global_group = PackGroup(plan.n_threads, on_cycle=_count_cross)
        else:
            self.global_group = None

        self.chunk_slots: list[Optional[Range]] = [None] * nclusters
        self.dispatchers: dict[tuple[int, int], ChunkDispatcher] = {}
        if plan.dynamic:
            cfg = plan.clusters[0].tree.cache_config  # shared n_c and k_c
            for j_c in range(0, n, cfg.n_c):
                for p_c in range(0, k, cfg.k_c):
                    self.dispatchers[(j_c, p_c)] = plan.make_dispatcher()

        self.errors: list[BaseException] = []
        self.lock = threading.Lock()
        self.invocations = [0] * plan.n_threads
        self.busy_s = [0.0] * plan.n_threads
        self.packed_a = [0] * nclusters
        self.packed_b = [0] * nclusters
        self.busy_checksum = 0.0

    def abort_all(self):
        for g in self.cluster_groups:
            g.abort()
        if self.global_group is not None:
            self.global_group.abort()


def _worker(tid: int, shared: _Shared, A: np.ndarray, B: np.ndarray,
            C: np.ndarray, dims, cpu_set: Optional[set[int]]) -> None:
    plan = shared.plan
    m, n, k = dims
    slot = plan.threads[tid]
    cl = plan.clusters[slot.cluster_index]
    cfg = cl.tree.cache_config
    m_r, n_r = cfg.m_r, cfg.n_r
    slowdown = cl.spec.emulated_slowdown

    if cpu_set:
        try:
            os.sched_setaffinity(0, cpu_set)
        except OSError:
            pass

    cluster_group = shared.cluster_groups[slot.cluster_index]
    cluster_rank = cl.thread_ids.index(tid)
    if plan.shared_b and shared.global_group is not None:
        b_group, b_rank, b_parties = shared.global_group, tid, plan.n_threads
    else:
        b_group, b_rank, b_parties = cluster_group, cluster_rank, cl.spec.core_count
    a_buf = shared.a_bufs[slot.cluster_index]
    b_buf = shared.b_bufs[slot.cluster_index]

    invocations = 0
    busy_s = 0.0
    busy_sum = 0.0
    packed_a = 0
    packed_b = 0

    col_lo, col_hi = cl.col_range.begin, cl.col_range.end
    for j_c in range(col_lo, col_hi, cfg.n_c):
        nc_eff = min(cfg.n_c, col_hi - j_c)
        nb_panels = panels(nc_eff, n_r)
        for p_c in range(0, k, cfg.k_c):
            kc_eff = min(cfg.k_c, k - p_c)
            my_b = split_even(nb_panels, b_parties)[b_rank]
            if not my_b.empty:
                kernels.pack_b_slice(B, p_c, j_c, kc_eff, nc_eff, n_r,
                                     b_buf, my_b.begin, my_b.end)
                packed_b += len(my_b) * n_r * kc_eff * 8
            synchronize_packing(b_group, ("B", j_c, p_c))

            def do_block(rng: Range):
                nonlocal invocations, busy_s, busy_sum, packed_a
                mc_eff = len(rng)
                na_panels = panels(mc_eff, m_r)
                my_a = split_even(na_panels, cl.spec.core_count)[cluster_rank]
                if not my_a.empty:
                    kernels.pack_a_slice(A, rng.begin, p_c, mc_eff, kc_eff,
                                         m_r, a_buf, my_a.begin, my_a.end)
                    packed_a += len(my_a) * m_r * kc_eff * 8
                synchronize_packing(cluster_group, ("A", j_c, p_c, rng.begin))
                jr = split_even(nb_panels, cl.d4)[slot.fine4_index]
                ir = split_even(na_panels, cl.d5)[slot.fine5_index]
                t0 = time.perf_counter()
                inv, busy = kernels.macro_tiles(
                    a_buf, b_buf, C, rng.begin, j_c, mc_eff, nc_eff, kc_eff,
                    m_r, n_r, jr.begin, jr.end, ir.begin, ir.end, slowdown)
                busy_s += time.perf_counter() - t0
                invocations += inv
                busy_sum += busy
                # readers done: safe to re-pack A / re-publish the chunk slot
                synchronize_packing(cluster_group, ("A-done", j_c, p_c, rng.begin))

            if plan.dynamic:
                dispatcher = shared.dispatchers[(j_c, p_c)]
                while True:
                    if slot.is_leader:
                        shared.chunk_slots[slot.cluster_index] = \
                            dispatcher.next_chunk(slot.core_class)
                    cluster_group.synchronize(("chunk", j_c, p_c))
                    rng = shared.chunk_slots[slot.cluster_index]
                    if rng is None:
                        break
                    do_block(rng)
            else:
                row_lo, row_hi = cl.row_range.begin, cl.row_range.end
                for i_c in range(row_lo, row_hi, cfg.m_c):
                    do_block(Range(i_c, min(i_c + cfg.m_c, row_hi)))

            # every reader of this B block is done before it is re-packed
            synchronize_packing(b_group, ("B-done", j_c, p_c))

    with shared.lock:
        shared.invocations[tid] = invocations
        shared.busy_s[tid] = busy_s
        shared.packed_a[slot.cluster_index] += packed_a
        shared.packed_b[slot.cluster_index] += packed_b
        shared.busy_checksum += busy_sum


def _worker_entry(tid, shared, A, B, C, dims, cpu_set):
    try:
        _worker(tid, shared, A, B, C, dims, cpu_set)
    except threading.BrokenBarrierError:
        pass  # another worker failed first
    except BaseException as exc:  # noqa: BLE001 - reported after join
        with shared.lock:
            shared.errors.append(exc)
        shared.abort_all()


def gemm_parallel(req: GemmRequest, bind_affinity: Optional[bool] = None
                  ) -> ExecutionStats:
    """Run C += A.B with the request's policy on worker threads.

    Numerically identical (bitwise) to gemm_sequential on the same
    request. Raises PlanError for invalid scheduling requests and
    ConformanceError for shape mismatches.
    """
    m, n, k = req.dims()
    plan = make_plan(req.policy, m, n, k, req.topology, req.trees,
                     ratio=req.ratio, override_mc_slow=req.override_mc_slow)
    stats = ExecutionStats(
        per_thread_invocations=[0] * plan.n_threads,
        per_thread_busy_s=[0.0] * plan.n_threads,
        per_thread_class=[t.core_class for t in plan.threads],
        per_cluster_packed_a_bytes=[0] * len(plan.clusters),
        per_cluster_packed_b_bytes=[0] * len(plan.clusters),
    )
    if m == 0 or n == 0 or k == 0:
        return stats

    shared = _Shared(plan, (m, n, k))
    cpu_sets = None
    if bind_affinity or bind_affinity is None:
        cpu_sets = _cluster_cpu_sets(plan)
        if bind_affinity and cpu_sets is None:
            raise PlanError("affinity binding requested but unavailable")

    t_start = time.perf_counter()
    workers = []
    for t in plan.threads:
        cpu_set = cpu_sets[t.cluster_index] if cpu_sets else None
        th = threading.Thread(
            target=_worker_entry,
            args=(t.thread_id, shared, req.A.array, req.B.array,
                  req.C.array, (m, n, k), cpu_set),
            name=f"gemm-{t.core_class.value}-{t.thread_id}")
        workers.append(th)
        th.start()
    for th in workers:
        th.join()
    stats.wall_s = time.perf_counter() - t_start

    if shared.errors:
        raise shared.errors[0]

    stats.per_thread_invocations = list(shared.invocations)
    stats.per_thread_busy_s = list(shared.busy_s)
    stats.per_cluster_packed_a_bytes = list(shared.packed_a)
    stats.per_cluster_packed_b_bytes = list(shared.packed_b)
    stats.cross_cluster_barriers = shared.cross_barriers
    stats.busy_checksum = shared.busy_checksum
    return stats


def gemm_sequential(req: GemmRequest) -> ExecutionStats:
    """Single-threaded reference execution of the same plan.

    Processes exactly the blocks the parallel version would, in
    ascending k-block order per element, through the same packing and
    micro-kernel code, so its C is the bitwise reference for
    gemm_parallel. Stats carry one entry per cluster."""
    m, n, k = req.dims()
    plan = make_plan(req.policy, m, n, k, req.topology, req.trees,
                     ratio=req.ratio, override_mc_slow=req.override_mc_slow)
    nclusters = len(plan.clusters)
    stats = ExecutionStats(
        per_thread_invocations=[0] * nclusters,
        per_thread_busy_s=[0.0] * nclusters,
        per_thread_class=[c.spec.core_class for c in plan.clusters],
        per_cluster_packed_a_bytes=[0] * nclusters,
        per_cluster_packed_b_bytes=[0] * nclusters,
    )
    if m == 0 or n == 0 or k == 0:
        return stats

    A, B, C = req.A.array, req.B.array, req.C.array
    t_start = time.perf_counter()

    bufs = {}
    for cl in plan.clusters:
        cfg = cl.tree.cache_config
        bufs[cl.index] = (
            np.empty(panels(cfg.m_c, cfg.m_r) * cfg.m_r * cfg.k_c),
            np.empty(panels(cfg.n_c, cfg.n_r) * cfg.n_r * cfg.k_c),
        )

    def run_block(cl, j_c, p_c, nc_eff, kc_eff, rng, b_buf):
        cfg = cl.tree.cache_config
        a_buf = bufs[cl.index][0]
        mc_eff = len(rng)
        na = panels(mc_eff, cfg.m_r)
        kernels.pack_a_slice(A, rng.begin, p_c, mc_eff, kc_eff, cfg.m_r,
                             a_buf, 0, na)
        stats.per_cluster_packed_a_bytes[cl.index] += na * cfg.m_r * kc_eff * 8
        t0 = time.perf_counter()
        inv, busy = kernels.macro_tiles(
            a_buf, b_buf, C, rng.begin, j_c, mc_eff, nc_eff, kc_eff,
            cfg.m_r, cfg.n_r, 0, panels(nc_eff, cfg.n_r), 0, na,
            cl.spec.emulated_slowdown)
        stats.per_thread_busy_s[cl.index] += time.perf_counter() - t0
        stats.per_thread_invocations[cl.index] += inv
        stats.busy_checksum += busy

    if plan.shared_b:
        # one common (j_c, p_c) nest; n_c and k_c agree across clusters
        cfg0 = plan.clusters[0].tree.cache_config
        b_buf = bufs[plan.clusters[0].index][1]
        for j_c in range(0, n, cfg0.n_c):
            nc_eff = min(cfg0.n_c, n - j_c)
            for p_c in range(0, k, cfg0.k_c):
                kc_eff = min(cfg0.k_c, k - p_c)
                kernels.pack_b_slice(B, p_c, j_c, kc_eff, nc_eff, cfg0.n_r,
                                     b_buf, 0, panels(nc_eff, cfg0.n_r))
                stats.per_cluster_packed_b_bytes[0] += \
                    panels(nc_eff, cfg0.n_r) * cfg0.n_r * kc_eff * 8
                if plan.dynamic:
                    dispatcher = plan.make_dispatcher()
                    exhausted = False
                    while not exhausted:
                        exhausted = True
                        for cl in plan.clusters:
                            rng = dispatcher.next_chunk(cl.spec.core_class)
                            if rng is not None:
                                run_block(cl, j_c, p_c, nc_eff, kc_eff, rng, b_buf)
                                exhausted = False
                else:
                    for cl in plan.clusters:
                        cfg = cl.tree.cache_config
                        lo, hi = cl.row_range.begin, cl.row_range.end
                        for i_c in range(lo, hi, cfg.m_c):
                            run_block(cl, j_c, p_c, nc_eff, kc_eff,
                                      Range(i_c, min(i_c + cfg.m_c, hi)), b_buf)
    else:
        for cl in plan.clusters:
            cfg = cl.tree.cache_config
            b_buf = bufs[cl.index][1]
            col_lo, col_hi = cl.col_range.begin, cl.col_range.end
            for j_c in range(col_lo, col_hi, cfg.n_c):
                nc_eff = min(cfg.n_c, col_hi - j_c)
                for p_c in range(0, k, cfg.k_c):
                    kc_eff = min(cfg.k_c, k - p_c)
                    kernels.pack_b_slice(B, p_c, j_c, kc_eff, nc_eff, cfg.n_r,
                                         b_buf, 0, panels(nc_eff, cfg.n_r))
                    stats.per_cluster_packed_b_bytes[cl.index] += \
                        panels(nc_eff, cfg.n_r) * cfg.n_r * kc_eff * 8
                    lo, hi = cl.row_range.begin, cl.row_range.end
                    for i_c in range(lo, hi, cfg.m_c):
                        run_block(cl, j_c, p_c, nc_eff, kc_eff,
                                  Range(i_c, min(i_c + cfg.m_c, hi)), b_buf)

    stats.wall_s = time.perf_counter() - t_start
    return stats
