import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asymgemm.model import Matrix
from asymgemm.packing import pack_a, pack_b, panels, unpack_a, unpack_b


def test_pack_a_pads_short_panel():
    A = Matrix.from_2d([[1, 3], [2, 4]])
    packed = pack_a(A, m_r=4)
    assert packed.buffer.tolist() == [1, 2, 0, 0, 3, 4, 0, 0]
    assert (packed.mc_eff, packed.kc_eff) == (2, 2)


def test_pack_a_single_full_panel():
    A = Matrix.from_2d([[1], [2], [3], [4]])
    assert pack_a(A, m_r=4).buffer.tolist() == [1, 2, 3, 4]


def test_pack_a_stacks_panels():
    A = Matrix.from_2d([[i] for i in range(1, 9)])
    assert pack_a(A, m_r=4).buffer.tolist() == [1, 2, 3, 4, 5, 6, 7, 8]


def test_pack_b_pads_short_panel():
    B = Matrix.from_2d([[1, 3], [2, 4]])
    packed = pack_b(B, n_r=4)
    assert packed.buffer.tolist() == [1, 3, 0, 0, 2, 4, 0, 0]


def test_pack_b_single_row():
    B = Matrix.from_2d([[1, 3, 5, 7]])
    assert pack_b(B, n_r=4).buffer.tolist() == [1, 3, 5, 7]


def test_pack_b_two_panels_row_major_interior():
    B = Matrix.from_2d([[10 * i + j for j in range(8)] for i in range(2)])
    packed = pack_b(B, n_r=4)
    first_panel = packed.buffer[:8].tolist()
    assert first_panel == [0, 1, 2, 3, 10, 11, 12, 13]
    second_panel = packed.buffer[8:].tolist()
    assert second_panel == [4, 5, 6, 7, 14, 15, 16, 17]


def test_empty_views_pack_to_empty_buffers():
    assert pack_a(Matrix.zeros(0, 3), 4).buffer.size == 0
    assert pack_b(Matrix.zeros(3, 0), 4).buffer.size == 0


def test_source_is_not_modified_and_no_out_of_view_reads():
    rng = np.random.default_rng(5)
    big = rng.standard_normal((12, 12))
    poisoned = big.copy()
    poisoned[:3, :] = np.nan
    poisoned[8:, :] = np.nan
    poisoned[:, :2] = np.nan
    poisoned[:, 9:] = np.nan
    M = Matrix.from_2d(poisoned)
    view = M.view(3, 2, 5, 7)  # the only NaN-free region
    packed = pack_a(view, m_r=4)
    assert not np.isnan(packed.buffer).any()
    assert np.array_equal(M.array, poisoned, equal_nan=True)
    packed_b = pack_b(view, n_r=4)
    assert not np.isnan(packed_b.buffer).any()


def test_unpack_zero_buffer_gives_zero_matrix():
    packed = pack_a(Matrix.zeros(5, 3), 4)
    assert not unpack_a(packed).to_numpy().any()


@settings(max_examples=200, deadline=None)
@given(m=st.integers(1, 9), k=st.integers(1, 25), data=st.data())
def test_pack_a_round_trip(m, k, data):
    seed = data.draw(st.integers(0, 2**32 - 1))
    X = np.random.default_rng(seed).standard_normal((m, k))
    packed = pack_a(Matrix.from_2d(X), m_r=4)
    assert packed.buffer.size == panels(m, 4) * 4 * k
    assert np.array_equal(unpack_a(packed).to_numpy(), X)


@settings(max_examples=200, deadline=None)
@given(k=st.integers(1, 25), n=st.integers(1, 9), data=st.data())
def test_pack_b_round_trip(k, n, data):
    seed = data.draw(st.integers(0, 2**32 - 1))
    X = np.random.default_rng(seed).standard_normal((k, n))
    packed = pack_b(Matrix.from_2d(X), n_r=4)
    assert packed.buffer.size == panels(n, 4) * 4 * k
    assert np.array_equal(unpack_b(packed).to_numpy(), X)


def test_padding_lanes_are_exactly_zero():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((5, 7)) + 10.0  # no zeros of its own
    packed = pack_a(Matrix.from_2d(X), m_r=4)
    last = packed.panel(1).reshape(7, 4).T  # rows 4..7 of the block
    assert np.array_equal(last[1:, :], np.zeros((3, 7)))
    Y = rng.standard_normal((7, 5)) + 10.0
    packed_b = pack_b(Matrix.from_2d(Y), n_r=4)
    last_b = packed_b.panel(1).reshape(7, 4)
    assert np.array_equal(last_b[:, 1:], np.zeros((7, 3)))
