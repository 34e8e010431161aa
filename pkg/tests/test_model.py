import numpy as np
import pytest
from hypothesis import given, strategies as st

from asymgemm.model import (
    CacheConfig,
    ClusterSpec,
    ControlTree,
    CoreClass,
    Matrix,
    Range,
    Topology,
    cache_fit_check,
    max_mc_for_l2,
    validate_control_tree,
)

A15 = ClusterSpec(CoreClass.FAST, 4, 32768, 2097152,
                  CacheConfig(4096, 952, 152))
A7 = ClusterSpec(CoreClass.SLOW, 4, 32768, 524288,
                 CacheConfig(4096, 352, 80))


class TestMatrix:
    def test_layout_and_addressing(self):
        M = Matrix.zeros(3, 4, ld=5)
        assert (M.m, M.n, M.ld) == (3, 4, 5)
        M.array[2, 3] = 7.0
        # element (i, j) sits at flat offset i + j*ld of the base buffer
        base = M.array.base.reshape(-1, order="F")
        assert base[2 + 3 * 5] == 7.0

    def test_view_shares_storage(self):
        M = Matrix.from_2d(np.arange(12.0).reshape(3, 4))
        V = M.view(1, 1, 2, 2)
        V.array[0, 0] = -1.0
        assert M.array[1, 1] == -1.0
        assert V.ld == M.ld

    def test_ld_must_cover_rows(self):
        with pytest.raises(ValueError):
            Matrix.zeros(4, 2, ld=3)

    def test_requires_column_major(self):
        with pytest.raises(ValueError):
            Matrix(np.zeros((3, 3), order="C")[:, :2])


class TestCacheConfig:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            CacheConfig(n_c=0, k_c=1, m_c=1)

    def test_multiplicity_not_a_constructor_error(self):
        # reported by validate_control_tree instead
        cfg = CacheConfig(n_c=16, k_c=5, m_c=10, m_r=4, n_r=4)
        assert cfg.m_c == 10


class TestTopology:
    def test_two_clusters_need_distinct_classes(self):
        with pytest.raises(ValueError):
            Topology((A15, A15))

    def test_class_lookup(self):
        topo = Topology((A15, A7))
        assert topo.fast is A15 and topo.slow is A7
        assert topo.total_cores == 8


class TestValidateControlTree:
    topo8 = Topology((A15, A7))

    def test_loop2_parallelization_is_reported(self):
        tree = ControlTree(A15.cache_config, {2: 2, 4: 4}, coarse_loop=None)
        codes = [v.code for v in validate_control_tree(tree, self.topo8,
                                                       thread_count=8)]
        assert "LOOP2_RACE" in codes

    def test_sequential_tree_is_valid(self):
        solo = Topology((ClusterSpec(CoreClass.FAST, 1, 32768, 2097152,
                                     A15.cache_config),))
        tree = ControlTree(A15.cache_config)
        assert validate_control_tree(tree, solo) == []

    def test_paper_shape_two_by_four(self):
        tree = ControlTree(A15.cache_config, {1: 2, 4: 4},
                           coarse_loop=1, fine_loops=frozenset({4}))
        assert validate_control_tree(tree, self.topo8) == []

    def test_all_violations_reported(self):
        bad_cfg = CacheConfig(n_c=18, k_c=5, m_c=10, m_r=4, n_r=4)
        tree = ControlTree(bad_cfg, {2: 3, 4: 2}, coarse_loop=2,
                           fine_loops=frozenset({3}))
        codes = {v.code for v in validate_control_tree(tree, self.topo8)}
        assert codes == {"LOOP2_RACE", "BAD_COARSE_LOOP", "BAD_FINE_LOOP",
                         "DEGREE_PRODUCT_MISMATCH", "MC_NOT_MULTIPLE",
                         "NC_NOT_MULTIPLE"}


class TestCacheFit:
    def test_a15_optimal_parameters_fit(self):
        rep = cache_fit_check(CacheConfig(4096, 952, 152), A15)
        assert (rep.br_bytes, rep.ac_bytes) == (30464, 1157632)
        assert rep.br_fits and rep.ac_fits

    def test_a7_optimal_parameters_fit(self):
        rep = cache_fit_check(CacheConfig(4096, 352, 80), A7)
        assert (rep.br_bytes, rep.ac_bytes) == (11264, 225280)
        assert rep.br_fits and rep.ac_fits

    def test_big_cluster_parameters_overflow_small_l2(self):
        rep = cache_fit_check(CacheConfig(4096, 952, 152), A7)
        assert rep.ac_bytes == 1157632 and not rep.ac_fits

    @given(k_c=st.integers(1, 2000), m_c=st.integers(1, 512),
           bump_k=st.integers(0, 500), bump_m=st.integers(0, 200))
    def test_growing_blocks_never_start_fitting(self, k_c, m_c, bump_k, bump_m):
        small = cache_fit_check(CacheConfig(4096, k_c, m_c, 1, 4), A7)
        big = cache_fit_check(CacheConfig(4096, k_c + bump_k, m_c + bump_m, 1, 4), A7)
        if not small.br_fits:
            assert not big.br_fits
        if not small.ac_fits:
            assert not big.ac_fits


class TestMaxMcForL2:
    def test_shared_kc_slow_cluster_value(self):
        # floor(0.5 * 524288 / (952*8)) = 34, floored to a multiple of 4
        assert max_mc_for_l2(952, 524288, 8, 4, 0.5) == 32

    def test_single_micro_row_fits(self):
        assert max_mc_for_l2(1, 32, 8, 4, 1.0) == 4

    def test_nothing_fits(self):
        assert max_mc_for_l2(1000, 1024, 8, 4, 1.0) == 0

    @given(k_c=st.integers(1, 4096), l2=st.integers(1, 8 << 20),
           m_r=st.sampled_from([1, 2, 4, 8]),
           safety=st.floats(0.05, 1.0, allow_nan=False))
    def test_result_is_maximal_multiple(self, k_c, l2, m_r, safety):
        mc = max_mc_for_l2(k_c, l2, 8, m_r, safety)
        assert mc % m_r == 0
        assert mc * k_c * 8 <= safety * l2
        assert (mc + m_r) * k_c * 8 > safety * l2


class TestRange:
    def test_rejects_inverted(self):
        with pytest.raises(ValueError):
            Range(3, 2)

    def test_len(self):
        assert len(Range(2, 7)) == 5 and Range(4, 4).empty
