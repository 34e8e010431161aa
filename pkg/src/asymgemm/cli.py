"""Command-line front end: `bench` (timed sweeps with energy
accounting), `tune` (two-phase blocking-parameter search), `validate`
(every scheduling combination against the oracle), and `plan`
(iteration-space dump). Environment variables with the ASYMGEMM_ prefix
mirror the scheduling flags; explicit flags win.
"""

from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction
from pathlib import Path

from .bench import (
    MockTimer,
    describe_plan,
    render_csv,
    run_bench,
    validate_all,
)
from .model import ClusterSpec, SchedulingPolicy, Topology
from .power import ConstantPowerSampler, NullPowerSampler, ReplayPowerSampler, load_trace
from .profiles import ProfileError, builtin_profile, load_profile, save_profile
from .scheduler import PlanError, env_overrides, make_plan, parse_fine_loops, parse_ratio
from .bench import _trees_for
from .tuner import SearchSpec, timed_evaluator, tune, tuned_cluster

LOOP2_DIAGNOSTIC = ("LOOP2_RACE: loop 2 may never be parallelized "
                    "(concurrent threads would update the same elements of C)")


class CliError(Exception):
    pass


def _parse_sizes(args) -> list[int]:
    if args.size_range:
        try:
            lo, hi, step = (int(x) for x in args.size_range.split(":"))
        except ValueError:
            raise CliError(f"--size-range wants lo:hi:step, got {args.size_range!r}")
        if step < 1 or lo < 1 or hi < lo:
            raise CliError("--size-range needs 1 <= lo <= hi and step >= 1")
        return list(range(lo, hi + 1, step))
    if args.sizes:
        try:
            return [int(s) for s in args.sizes.split(",") if s]
        except ValueError:
            raise CliError(f"--sizes wants a comma list of integers, got {args.sizes!r}")
    raise CliError("give --sizes or --size-range")


def _parse_coarse(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise CliError(f"--coarse wants 1 or 3, got {text!r}")
    if value == 2:
        raise CliError(LOOP2_DIAGNOSTIC)
    if value not in (1, 3):
        raise CliError(f"coarse loop must be 1 or 3, got {value}")
    return value


def _parse_fine(text: str):
    if "2" in text:
        raise CliError(LOOP2_DIAGNOSTIC)
    try:
        return parse_fine_loops(text)
    except ValueError as exc:
        raise CliError(str(exc))


def _load_cluster(path_or_none, fallback: str, threads=None,
                  slowdown=None) -> ClusterSpec:
    cluster = load_profile(path_or_none) if path_or_none else builtin_profile(fallback)
    if threads is not None or slowdown is not None:
        cluster = ClusterSpec(
            cluster.core_class,
            threads if threads is not None else cluster.core_count,
            cluster.l1d_bytes, cluster.l2_bytes, cluster.cache_config,
            slowdown if slowdown is not None else cluster.emulated_slowdown)
    return cluster


def _build_topology(args, policy: SchedulingPolicy) -> Topology:
    fast = _load_cluster(args.fast_config, "exynos5422-a15",
                         args.threads_fast)
    if policy is SchedulingPolicy.SINGLE_CLUSTER:
        return Topology((fast,))
    slow = _load_cluster(args.slow_config, "exynos5422-a7",
                         args.threads_slow, args.slowdown_slow)
    return Topology((fast, slow))


def _sampler(args):
    if args.power_trace and args.power_const is not None:
        raise CliError("--power-trace and --power-const are mutually exclusive")
    if args.power_trace:
        return ReplayPowerSampler(load_trace(args.power_trace))
    if args.power_const is not None:
        return ConstantPowerSampler(args.power_const)
    return NullPowerSampler()


def _scheduling(args) -> tuple[SchedulingPolicy, int, frozenset, Fraction]:
    env = env_overrides()
    policy = SchedulingPolicy(args.policy) if args.policy \
        else env.get("policy", SchedulingPolicy.SSS)
    if args.coarse is not None:
        coarse = _parse_coarse(args.coarse)
    else:
        coarse = env.get("coarse")
        if coarse is not None and coarse not in (1, 3):
            raise CliError(LOOP2_DIAGNOSTIC if coarse == 2 else
                           f"coarse loop must be 1 or 3, got {coarse}")
    if coarse is None:
        coarse = 3 if policy.dynamic else 1
    fine = _parse_fine(args.fine) if args.fine else env.get("fine", frozenset({4}))
    if args.ratio is not None:
        ratio = parse_ratio(args.ratio)
    else:
        ratio = env.get("ratio", Fraction(3))
    if args.threads_fast is None and "threads_fast" in env:
        args.threads_fast = env["threads_fast"]
    if args.threads_slow is None and "threads_slow" in env:
        args.threads_slow = env["threads_slow"]
    if args.fast_config is None and "fast_config" in env:
        args.fast_config = env["fast_config"]
    if args.slow_config is None and "slow_config" in env:
        args.slow_config = env["slow_config"]
    return policy, coarse, fine, ratio


def _add_scheduling_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", choices=[x.value for x in SchedulingPolicy])
    p.add_argument("--ratio", help="fast:slow ratio, e.g. 3 or 5/2")
    p.add_argument("--coarse", help="coarse (inter-cluster) loop: 1 or 3")
    p.add_argument("--fine", help="fine (intra-cluster) loops: 4, 5 or 45")
    p.add_argument("--fast-config", help="fast-cluster profile path")
    p.add_argument("--slow-config", help="slow-cluster profile path")
    p.add_argument("--threads-fast", type=int)
    p.add_argument("--threads-slow", type=int)
    p.add_argument("--slowdown-slow", type=float,
                   help="override emulated slowdown of the slow cluster")
    p.add_argument("--no-affinity", action="store_true",
                   help="skip CPU pinning of cluster threads")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asymgemm",
        description="Blocked GEMM with asymmetry-aware scheduling: "
                    "benchmarks, tuning, validation, plan inspection.")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="timed size sweep with optional energy")
    _add_scheduling_flags(b)
    b.add_argument("--sizes", help="comma list of square sizes, e.g. 96,128")
    b.add_argument("--size-range", help="lo:hi:step")
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--csv", help="write records to this path (default stdout)")
    b.add_argument("--power-trace", help="replay power trace file")
    b.add_argument("--power-const", type=float, help="constant mock power in W")
    b.add_argument("--mock-timer", type=float, metavar="GFLOPS",
                   help="deterministic clock at this rate (reproducible output)")

    v = sub.add_parser("validate", help="all combinations against the oracle")
    _add_scheduling_flags(v)
    v.add_argument("--sizes", default="7,64,129")
    v.add_argument("--size-range")

    p = sub.add_parser("plan", help="dump the iteration-space partition")
    _add_scheduling_flags(p)
    p.add_argument("-m", type=int, required=True)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("-k", type=int, required=True)

    t = sub.add_parser("tune", help="two-phase (m_c, k_c) search for one cluster")
    t.add_argument("--config", help="cluster profile to tune (default fast builtin)")
    t.add_argument("--out", help="write the tuned profile here")
    t.add_argument("--log", help="JSON-lines log of every evaluated point")
    t.add_argument("--size", type=int, default=512, help="problem size r")
    t.add_argument("--reps", type=int, default=3)
    t.add_argument("--mc-grid", help="lo:hi:step or comma list")
    t.add_argument("--kc-grid", help="lo:hi:step or comma list")
    t.add_argument("--radius", type=int, default=2)
    t.add_argument("--step", type=int, help="refinement step (both axes)")
    t.add_argument("--seed", type=int, default=0)
    return parser


def _parse_grid(text: str) -> tuple[int, ...]:
    if ":" in text:
        lo, hi, step = (int(x) for x in text.split(":"))
        return tuple(range(lo, hi + 1, step))
    return tuple(int(x) for x in text.split(","))


def _cmd_bench(args) -> int:
    policy, coarse, fine, ratio = _scheduling(args)
    if args.no_affinity:
        os.environ["ASYMGEMM_NO_AFFINITY"] = "1"
    topology = _build_topology(args, policy)
    sizes = [(r, r, r) for r in _parse_sizes(args)]
    timer = MockTimer(args.mock_timer) if args.mock_timer else None
    records = run_bench(sizes, policy, topology, coarse, fine, ratio,
                        args.reps, sampler=_sampler(args), seed=args.seed,
                        mock_timer=timer)
    text = render_csv(records)
    if args.csv:
        Path(args.csv).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_validate(args) -> int:
    policy, coarse, fine, ratio = _scheduling(args)
    if args.no_affinity:
        os.environ["ASYMGEMM_NO_AFFINITY"] = "1"
    topology = _build_topology(args, SchedulingPolicy.SSS)
    sizes = [(r, r, r) for r in _parse_sizes(args)]
    results = validate_all(topology, sizes, ratio=ratio, seed=args.seed)
    failed = 0
    for res in results:
        status = "ok" if res.ok else "FAIL"
        print(f"{res.label:32s} max_rel_err={res.max_rel_error:.3e} "
              f"(tol {res.tolerance:.3e}) {status}")
        failed += 0 if res.ok else 1
    if failed:
        print(f"{failed} combination(s) failed", file=sys.stderr)
        return 1
    return 0


def _cmd_plan(args) -> int:
    policy, coarse, fine, ratio = _scheduling(args)
    topology = _build_topology(args, policy)
    trees = _trees_for(policy, topology, coarse, fine, ratio)
    plan = make_plan(policy, args.m, args.n, args.k, topology, trees, ratio)
    print(describe_plan(plan))
    return 0


def _cmd_tune(args) -> int:
    cluster = load_profile(args.config) if args.config \
        else builtin_profile("exynos5422-a15")
    kw = {}
    if args.mc_grid:
        kw["mc_grid"] = _parse_grid(args.mc_grid)
    if args.kc_grid:
        kw["kc_grid"] = _parse_grid(args.kc_grid)
    if args.step:
        kw["refine_step"] = args.step
    spec = SearchSpec(radius=args.radius, problem_size=args.size, **kw)
    evaluator = timed_evaluator(args.size, cluster, args.reps, seed=args.seed)
    result = tune(spec, evaluator, cluster, log_path=args.log)
    m_c, k_c = result.best
    print(f"best m_c={m_c} k_c={k_c} score={result.best_score:.3f} GFLOPS "
          f"({len(result.surface)} points evaluated, "
          f"{len(result.filtered())} filtered)")
    if args.out:
        save_profile(tuned_cluster(cluster, result), args.out)
        print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"bench": _cmd_bench, "validate": _cmd_validate,
                "plan": _cmd_plan, "tune": _cmd_tune}
    try:
        return handlers[args.command](args)
    except (CliError, PlanError, ProfileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
