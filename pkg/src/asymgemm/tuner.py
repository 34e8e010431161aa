"""Empirical two-phase search for the (m_c, k_c) blocking parameters of
one core class: a coarse sweep over a grid to find the promising region,
then a finer sweep around the coarse optimum. Candidates whose working
sets cannot fit the cluster's caches are filtered before evaluation.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .model import (
    CacheConfig,
    ClusterSpec,
    CoreClass,
    Matrix,
    SchedulingPolicy,
    Topology,
    cache_fit_check,
)

Evaluator = Callable[[int, int], float]

# Documented defaults; the heat-map extents are an artifact choice.
DEFAULT_MC_GRID = tuple(range(8, 257, 24))
DEFAULT_KC_GRID = tuple(range(64, 1025, 96))
DEFAULT_RADIUS = 2
DEFAULT_REFINE_STEP = (6, 24)  # quarter of each coarse grid step
TUNING_N_C = 4096  # n_c barely matters without an L3; pinned during search


class EmptySearchError(RuntimeError):
    """Every grid point was filtered out before evaluation."""


@dataclass(frozen=True)
class SearchSpec:
    """Grids and refinement shape for one tuning session."""

    mc_grid: tuple[int, ...] = DEFAULT_MC_GRID
    kc_grid: tuple[int, ...] = DEFAULT_KC_GRID
    radius: int = DEFAULT_RADIUS
    refine_step: Union[int, tuple[int, int]] = DEFAULT_REFINE_STEP
    repetitions: int = 1
    problem_size: int = 512

    def __post_init__(self):
        for name in ("mc_grid", "kc_grid"):
            grid = tuple(getattr(self, name))
            if not grid or list(grid) != sorted(grid):
                raise ValueError(f"{name} must be non-empty and ascending")
            object.__setattr__(self, name, grid)
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        step = self.refine_step
        step = (step, step) if isinstance(step, int) else tuple(step)
        if len(step) != 2 or any(s < 1 for s in step):
            raise ValueError("refine_step must be a positive int or pair")
        object.__setattr__(self, "refine_step", step)


@dataclass
class TuneResult:
    best: tuple[int, int]
    best_score: float
    surface: dict[tuple[int, int], float]
    phase_log: list[dict] = field(default_factory=list)

    def evaluated(self, phase: Optional[str] = None) -> list[tuple[int, int]]:
        return [(e["m_c"], e["k_c"]) for e in self.phase_log
                if "score" in e and (phase is None or e["phase"] == phase)]

    def filtered(self) -> list[tuple[int, int]]:
        return [(e["m_c"], e["k_c"]) for e in self.phase_log
                if e["phase"] == "filtered"]


def _feasible(m_c: int, k_c: int, cluster: ClusterSpec,
              elem_bytes: int, occupancy: float) -> tuple[bool, str]:
    base = cluster.cache_config
    if m_c < base.m_r or m_c % base.m_r != 0:
        return False, f"m_c={m_c} not a positive multiple of m_r={base.m_r}"
    cfg = base.with_values(m_c=m_c, k_c=k_c)
    report = cache_fit_check(cfg, cluster, elem_bytes, occupancy)
    if not report.br_fits:
        return False, f"B panel {report.br_bytes} B exceeds L1d {cluster.l1d_bytes} B"
    if not report.ac_fits:
        return False, f"A block {report.ac_bytes} B exceeds L2 {cluster.l2_bytes} B"
    return True, ""


def tune(spec: SearchSpec, evaluator: Evaluator, cluster: ClusterSpec,
         elem_bytes: int = 8, occupancy: float = 1.0,
         log_path: Optional[Union[str, Path]] = None) -> TuneResult:
    """Two-phase grid search maximizing ``evaluator(m_c, k_c)``.

    Phase 1 sweeps the full coarse grid; phase 2 sweeps a
    (2*radius+1)^2 neighborhood at the refinement step around the coarse
    argmax, clipped to feasible points. The winner is the global argmax
    over everything evaluated; ties go to the smaller packed-A footprint.
    When ``spec.repetitions`` > 1 each point scores the median of that
    many evaluator calls.
    """
    surface: dict[tuple[int, int], float] = {}
    log: list[dict] = []

    def evaluate(m_c: int, k_c: int, phase: str) -> None:
        point = (m_c, k_c)
        if point in surface:
            return
        ok, reason = _feasible(m_c, k_c, cluster, elem_bytes, occupancy)
        if not ok:
            log.append({"m_c": m_c, "k_c": k_c, "phase": "filtered",
                        "reason": reason})
            return
        scores = [evaluator(m_c, k_c) for _ in range(spec.repetitions)]
        score = statistics.median(scores)
        surface[point] = score
        log.append({"m_c": m_c, "k_c": k_c, "score": score, "phase": phase})

    for m_c in spec.mc_grid:
        for k_c in spec.kc_grid:
            evaluate(m_c, k_c, "coarse")
    if not surface:
        raise EmptySearchError("no feasible grid point for this cluster")

    def argmax() -> tuple[int, int]:
        # max score, then smaller m_c*k_c footprint, then lexicographic
        return min(surface,
                   key=lambda p: (-surface[p], p[0] * p[1] * elem_bytes, p))

    center = argmax()
    step_mc, step_kc = spec.refine_step
    m_r = cluster.cache_config.m_r
    for i in range(-spec.radius, spec.radius + 1):
        for j in range(-spec.radius, spec.radius + 1):
            m_c = center[0] + i * step_mc
            m_c -= m_c % m_r  # keep candidates on the register-block grid
            k_c = center[1] + j * step_kc
            if m_c >= m_r and k_c >= 1:
                evaluate(m_c, k_c, "refine")

    best = argmax()
    result = TuneResult(best=best, best_score=surface[best],
                        surface=surface, phase_log=log)
    if log_path is not None:
        with open(log_path, "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
    return result


def timed_evaluator(r: int, cluster: ClusterSpec, repetitions: int,
                    runner: Optional[Callable[[int, int], None]] = None,
                    timer: Callable[[], float] = time.perf_counter,
                    seed: int = 0) -> Evaluator:
    """Evaluator scoring a candidate (m_c, k_c) in GFLOPS from timed
    r x r x r runs on the cluster (median of ``repetitions``).

    ``runner`` executes one run with the candidate parameters and
    ``timer`` supplies timestamps; both are injectable for tests.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if runner is None:
        runner = _cluster_runner(r, cluster, seed)

    def evaluate(m_c: int, k_c: int) -> float:
        times = []
        for _ in range(repetitions):
            t0 = timer()
            runner(m_c, k_c)
            times.append(timer() - t0)
        return 2.0 * r ** 3 / statistics.median(times) / 1e9

    return evaluate


def _cluster_runner(r: int, cluster: ClusterSpec, seed: int):
    # imported here to keep tuner importable without the engine warm
    from .engine import GemmRequest, gemm_parallel
    from .scheduler import build_tree

    rng = np.random.default_rng(seed)
    A = Matrix.from_2d(rng.standard_normal((r, r)))
    B = Matrix.from_2d(rng.standard_normal((r, r)))
    C = Matrix.zeros(r, r)

    def run(m_c: int, k_c: int) -> None:
        cfg = cluster.cache_config.with_values(m_c=m_c, k_c=k_c, n_c=TUNING_N_C)
        solo = ClusterSpec(cluster.core_class, cluster.core_count,
                           cluster.l1d_bytes, cluster.l2_bytes, cfg,
                           cluster.emulated_slowdown)
        topo = Topology((solo,))
        tree = build_tree(cfg, fine_loops=frozenset({4}),
                          cluster_cores=cluster.core_count)
        C.array[...] = 0.0
        gemm_parallel(GemmRequest(A, B, C, topo,
                                  SchedulingPolicy.SINGLE_CLUSTER, (tree,)))

    return run


def tuned_cluster(cluster: ClusterSpec, result: TuneResult) -> ClusterSpec:
    """The input cluster with its blocking parameters replaced by the
    tuning winner, ready to be written as a profile file."""
    m_c, k_c = result.best
    return ClusterSpec(cluster.core_class, cluster.core_count,
                       cluster.l1d_bytes, cluster.l2_bytes,
                       cluster.cache_config.with_values(m_c=m_c, k_c=k_c),
                       cluster.emulated_slowdown)
