"""Benchmark machinery behind the CLI: timed size sweeps per policy with
energy accounting, oracle validation across every scheduling
combination, and plan rendering.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .engine import GemmRequest, gemm_parallel, gemm_sequential, ExecutionStats
from .model import (
    ControlTree,
    CoreClass,
    Matrix,
    SchedulingPolicy,
    Topology,
)
from .oracle import gemm_tolerance, matmul_outer, relative_error
from .power import NullPowerSampler, integrate_energy
from .scheduler import PlanError, WorkPlan, build_tree, make_plan, split_even

CSV_COLUMNS = ("policy", "ratio", "coarse", "fine", "m", "n", "k", "time_s",
               "gflops", "joules", "gflops_per_watt", "uk_fast", "uk_slow")


@dataclass(frozen=True)
class BenchRecord:
    policy: SchedulingPolicy
    ratio: Optional[Fraction]
    coarse: Optional[int]
    fine: frozenset[int]
    m: int
    n: int
    k: int
    time_s: float
    gflops: float
    joules: Optional[float]
    gflops_per_watt: Optional[float]
    uk_fast: int
    uk_slow: int


class MockTimer:
    """Deterministic clock for reproducible benchmark output: a run of
    f flops takes exactly f / (rate_gflops * 1e9) seconds."""

    def __init__(self, rate_gflops: float = 8.0):
        if rate_gflops <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate_gflops

    def elapsed(self, flops: float) -> float:
        return flops / (self.rate * 1e9)


def _fine_text(fine: frozenset[int]) -> str:
    return "".join(str(i) for i in sorted(fine))


def _ratio_text(ratio: Optional[Fraction]) -> str:
    return "" if ratio is None else str(ratio)


def _float_text(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


def render_csv(records: Sequence[BenchRecord]) -> str:
    out = io.StringIO()
    out.write(",".join(CSV_COLUMNS) + "\n")
    for r in records:
        row = (r.policy.value, _ratio_text(r.ratio),
               "" if r.coarse is None else str(r.coarse), _fine_text(r.fine),
               str(r.m), str(r.n), str(r.k), _float_text(r.time_s),
               _float_text(r.gflops), _float_text(r.joules),
               _float_text(r.gflops_per_watt), str(r.uk_fast), str(r.uk_slow))
        out.write(",".join(row) + "\n")
    return out.getvalue()


def _trees_for(policy: SchedulingPolicy, topology: Topology,
               coarse: Optional[int], fine: frozenset[int],
               ratio: Fraction) -> tuple[ControlTree, ...]:
    n_clusters = len(topology.clusters)
    if n_clusters == 1:
        coarse = None
    fast = topology.fast if n_clusters > 1 else topology.clusters[0]
    trees = [build_tree(fast.cache_config, coarse, fine, fast.core_count,
                        n_clusters, ratio)]
    if policy.dual_tree:
        slow = topology.slow
        trees.append(build_tree(slow.cache_config, coarse, fine,
                                slow.core_count, n_clusters, ratio))
    return tuple(trees)


def run_bench(sizes: Sequence[tuple[int, int, int]], policy: SchedulingPolicy,
              topology: Topology, coarse: Optional[int], fine: frozenset[int],
              ratio: Fraction, repetitions: int, sampler=None, seed: int = 0,
              mock_timer: Optional[MockTimer] = None,
              override_mc_slow: Optional[int] = None) -> list[BenchRecord]:
    """Per size: one warm-up run, then ``repetitions`` timed runs with
    the sampler wrapped around each. The reported figures come from the
    run with the (low) median time. Records follow input order."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    sampler = sampler or NullPowerSampler()
    records = []
    for m, n, k in sizes:
        rng = np.random.default_rng([seed, m, n, k])
        A = Matrix.from_2d(rng.standard_normal((m, k)))
        B = Matrix.from_2d(rng.standard_normal((k, n)))
        C0 = rng.standard_normal((m, n))
        trees = _trees_for(policy, topology, coarse, fine, ratio)
        flops = 2.0 * m * n * k

        def one_run() -> tuple[float, ExecutionStats, Optional[float]]:
            C = Matrix.from_2d(C0)
            req = GemmRequest(A, B, C, topology, policy, trees, ratio=ratio,
                              override_mc_slow=override_mc_slow)
            if mock_timer is None:
                t0 = time.perf_counter()
                sampler.start(t0)
                stats = gemm_parallel(req)
                t1 = time.perf_counter()
            else:
                sampler.start(0.0)
                stats = gemm_parallel(req)
                t0, t1 = 0.0, mock_timer.elapsed(flops)
            trace = sampler.stop(t1)
            energy = integrate_energy(trace, t0, t1) if trace else None
            return t1 - t0, stats, None if energy is None else energy.total

        one_run()  # warm-up
        runs = [one_run() for _ in range(repetitions)]
        runs_by_time = sorted(runs, key=lambda r: r[0])
        time_s, stats, joules = runs_by_time[(len(runs) - 1) // 2]

        # one shared gigaflop count keeps GFLOPS/W == GFLOPS/watts exact
        # under a constant-power sampler (same rounding on both paths)
        gfl = flops / 1e9
        gflops = gfl / time_s
        by_class = stats.invocations_by_class()
        records.append(BenchRecord(
            policy=policy, ratio=ratio if policy in
            (SchedulingPolicy.SAS, SchedulingPolicy.CA_SAS) else None,
            coarse=coarse if len(topology.clusters) > 1 else None,
            fine=fine, m=m, n=n, k=k, time_s=time_s, gflops=gflops,
            joules=joules,
            gflops_per_watt=None if joules is None else gfl / joules,
            uk_fast=by_class.get(CoreClass.FAST, 0),
            uk_slow=by_class.get(CoreClass.SLOW, 0)))
    return records


@dataclass(frozen=True)
class ValidationResult:
    label: str
    max_rel_error: float
    tolerance: float
    ok: bool


def validation_combos(topology: Topology, ratio: Fraction,
                      fine_sets: Sequence[frozenset[int]] = (frozenset({4}),
                                                             frozenset({5}))):
    """Every runnable (policy, coarse, fine) combination on the
    topology: dynamic policies only distribute loop 3."""
    multi = len(topology.clusters) > 1
    combos = []
    if not multi:
        for fine in fine_sets:
            combos.append((SchedulingPolicy.SINGLE_CLUSTER, None, fine))
        return combos
    for policy in (SchedulingPolicy.SSS, SchedulingPolicy.SAS,
                   SchedulingPolicy.CA_SAS):
        for coarse in (1, 3):
            for fine in fine_sets:
                combos.append((policy, coarse, fine))
    for policy in (SchedulingPolicy.DAS, SchedulingPolicy.CA_DAS):
        for fine in fine_sets:
            combos.append((policy, 3, fine))
    return combos


def validate_all(topology: Topology, sizes: Sequence[tuple[int, int, int]],
                 ratio: Fraction = Fraction(3), seed: int = 0
                 ) -> list[ValidationResult]:
    """Run every scheduling combination at the given sizes against the
    rank-1-update oracle (and the sequential execution, bitwise)."""
    results = []
    for policy, coarse, fine in validation_combos(topology, ratio):
        label = f"{policy.value} coarse={coarse or '-'} fine={_fine_text(fine)}"
        worst = 0.0
        worst_tol = gemm_tolerance(1)
        ok = True
        for m, n, k in sizes:
            rng = np.random.default_rng([seed, m, n, k])
            A = Matrix.from_2d(rng.standard_normal((m, k)))
            B = Matrix.from_2d(rng.standard_normal((k, n)))
            C0 = rng.standard_normal((m, n))
            trees = _trees_for(policy, topology, coarse, fine, ratio)
            C = Matrix.from_2d(C0)
            gemm_parallel(GemmRequest(A, B, C, topology, policy, trees, ratio))
            Cseq = Matrix.from_2d(C0)
            gemm_sequential(GemmRequest(A, B, Cseq, topology, policy, trees, ratio))
            ref = C0 + matmul_outer(A.to_numpy(), B.to_numpy())
            err = relative_error(C.to_numpy(), ref)
            tol = gemm_tolerance(k)
            if err > worst:
                worst, worst_tol = err, tol
            if err > tol or not np.array_equal(C.to_numpy(), Cseq.to_numpy()):
                ok = False
        results.append(ValidationResult(label, worst, worst_tol, ok))
    return results


def _thread_list(ids: Sequence[int]) -> str:
    ids = sorted(ids)
    if len(ids) == 1:
        return f"Th{ids[0]}"
    if ids == list(range(ids[0], ids[-1] + 1)):
        return f"Th{ids[0]}-Th{ids[-1]}"
    return ",".join(f"Th{i}" for i in ids)


def describe_plan(plan: WorkPlan) -> str:
    """Loop-by-loop dump of the iteration-space partition: loop id,
    ranges, owning threads."""
    lines = [f"policy={plan.policy.value} m={plan.m} n={plan.n} k={plan.k} "
             f"threads={plan.n_threads}"]
    all_threads = _thread_list([t.thread_id for t in plan.threads])

    # Loop 1
    if plan.coarse_loop == 1 and len(plan.clusters) > 1:
        cells = [f"[{c.col_range.begin},{c.col_range.end}) "
                 f"{_thread_list(c.thread_ids)}" for c in plan.clusters]
        lines.append(f"Loop 1 (j_c) {len(plan.clusters)}-way: " + " | ".join(cells))
    else:
        lines.append(f"Loop 1 (j_c) 1-way: [0,{plan.n}) {all_threads}")
    # Loop 2
    lines.append(f"Loop 2 (p_c) 1-way: [0,{plan.k}) {all_threads}")
    # Loop 3
    if plan.dynamic:
        chunks = ", ".join(f"{cls.value} m_c={size}"
                           for cls, size in sorted(plan.chunk_sizes.items(),
                                                   key=lambda x: x[0].value))
        lines.append(f"Loop 3 (i_c): dynamic (leader-dispatched, "
                     f"chunk = class m_c: {chunks})")
    elif plan.coarse_loop == 3 and len(plan.clusters) > 1:
        cells = [f"[{c.row_range.begin},{c.row_range.end}) "
                 f"{_thread_list(c.thread_ids)}" for c in plan.clusters]
        lines.append(f"Loop 3 (i_c) {len(plan.clusters)}-way: " + " | ".join(cells))
    else:
        lines.append(f"Loop 3 (i_c) 1-way: [0,{plan.m}) {all_threads}")
    # Loops 4 and 5: per-cluster split of one full block
    for cl in plan.clusters:
        cfg = cl.tree.cache_config
        tag = f"cluster {cl.index} ({cl.spec.core_class.value})"
        parts4 = split_even(cfg.n_c, cl.d4, cfg.n_r)
        owners4 = [[t.thread_id for t in plan.threads
                    if t.cluster_index == cl.index and t.fine4_index == i]
                   for i in range(cl.d4)]
        cells4 = [f"[{p.begin},{p.end}) {_thread_list(o)}"
                  for p, o in zip(parts4, owners4)]
        lines.append(f"Loop 4 (j_r) {cl.d4}-way {tag}, block [0,{cfg.n_c}): "
                     + " | ".join(cells4))
        parts5 = split_even(cfg.m_c, cl.d5, cfg.m_r)
        owners5 = [[t.thread_id for t in plan.threads
                    if t.cluster_index == cl.index and t.fine5_index == i]
                   for i in range(cl.d5)]
        cells5 = [f"[{p.begin},{p.end}) {_thread_list(o)}"
                  for p, o in zip(parts5, owners5)]
        lines.append(f"Loop 5 (i_r) {cl.d5}-way {tag}, block [0,{cfg.m_c}): "
                     + " | ".join(cells5))
    return "\n".join(lines)
