from fractions import Fraction

import numpy as np
import pytest

from asymgemm.bench import (
    CSV_COLUMNS,
    MockTimer,
    describe_plan,
    render_csv,
    run_bench,
    validate_all,
    validation_combos,
)
from asymgemm.model import (
    CacheConfig,
    ClusterSpec,
    CoreClass,
    SchedulingPolicy,
    Topology,
)
from asymgemm.power import ConstantPowerSampler
from asymgemm.scheduler import build_tree, make_plan


def duo(n_c=16, k_c=12, m_c=8):
    fast = ClusterSpec(CoreClass.FAST, 2, 32768, 2 << 20,
                       CacheConfig(n_c, k_c, m_c))
    slow = ClusterSpec(CoreClass.SLOW, 2, 32768, 512 << 10,
                       CacheConfig(n_c, k_c, m_c))
    return Topology((fast, slow))


def test_constant_power_identity():
    topo = duo()
    records = run_bench([(16, 16, 16), (24, 24, 24)], SchedulingPolicy.SSS,
                        topo, 1, frozenset({4}), Fraction(1), repetitions=2,
                        sampler=ConstantPowerSampler(4.0), seed=3,
                        mock_timer=MockTimer(8.0))
    assert [r.m for r in records] == [16, 24]  # input order
    for r in records:
        assert r.joules is not None
        assert r.gflops_per_watt == r.gflops / 4.0
        assert r.gflops == pytest.approx(8.0)


def test_uk_counts_split_by_class():
    topo = duo()
    records = run_bench([(32, 32, 24)], SchedulingPolicy.SAS, topo, 1,
                        frozenset({4}), Fraction(3), repetitions=1, seed=5)
    rec = records[0]
    tiles = (32 // 4) * (32 // 4) * 2  # two k-blocks of 12
    assert rec.uk_fast + rec.uk_slow == tiles
    assert rec.uk_fast == 3 * rec.uk_slow
    assert rec.ratio == Fraction(3)


def test_ratio_blank_for_symmetric_policies():
    topo = duo()
    records = run_bench([(16, 16, 16)], SchedulingPolicy.SSS, topo, 1,
                        frozenset({4}), Fraction(1), repetitions=1, seed=5)
    assert records[0].ratio is None


def test_csv_schema_and_blank_energy():
    topo = duo()
    records = run_bench([(16, 16, 16)], SchedulingPolicy.SSS, topo, 1,
                        frozenset({4}), Fraction(1), repetitions=1, seed=5)
    text = render_csv(records)
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(CSV_COLUMNS)
    first = lines[1].split(",")
    assert len(first) == len(CSV_COLUMNS)
    joules_col = CSV_COLUMNS.index("joules")
    assert first[joules_col] == ""  # no sampler -> absent energy


def test_mock_timer_makes_output_reproducible():
    topo = duo()
    outs = []
    for _ in range(2):
        records = run_bench([(16, 16, 16), (20, 20, 20)], SchedulingPolicy.SAS,
                            topo, 1, frozenset({4}), Fraction(3),
                            repetitions=3, sampler=ConstantPowerSampler(4.0),
                            seed=11, mock_timer=MockTimer(8.0))
        outs.append(render_csv(records))
    assert outs[0] == outs[1]


def test_validation_combos_cover_policies():
    combos = validation_combos(duo(), Fraction(3))
    policies = {p for p, _, _ in combos}
    assert policies == {SchedulingPolicy.SSS, SchedulingPolicy.SAS,
                        SchedulingPolicy.CA_SAS, SchedulingPolicy.DAS,
                        SchedulingPolicy.CA_DAS}
    assert all(c == 3 for p, c, _ in combos if p.dynamic)


def test_validate_all_passes_on_sane_topology():
    results = validate_all(duo(), [(7, 7, 7), (16, 16, 16), (21, 13, 9)],
                           ratio=Fraction(3), seed=1)
    assert results and all(r.ok for r in results)
    assert all(r.max_rel_error <= r.tolerance for r in results)


def test_describe_plan_static_layout():
    topo = duo()
    fast = topo.clusters[0]
    tree = build_tree(fast.cache_config, 1, frozenset({4}), 2, 2, Fraction(3))
    plan = make_plan(SchedulingPolicy.SAS, 1024, 1024, 1024, topo, (tree,),
                     Fraction(3))
    text = describe_plan(plan)
    assert "[0,768) Th0-Th1" in text
    assert "[768,1024) Th2-Th3" in text
    assert "Loop 2" in text and "Loop 5" in text


def test_describe_plan_dynamic_row():
    topo = duo()
    trees = (build_tree(topo.clusters[0].cache_config, 3, frozenset({4}), 2, 2),
             build_tree(topo.clusters[1].cache_config, 3, frozenset({4}), 2, 2))
    plan = make_plan(SchedulingPolicy.CA_DAS, 128, 128, 128, topo, trees,
                     override_mc_slow=8)
    text = describe_plan(plan)
    assert "dynamic (leader-dispatched, chunk = class m_c" in text
