import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gflowlab.hypergrid import (
    RIGHT,
    TERMINATE,
    UP,
    GridError,
    GridSpec,
    HideMode,
    HidingMask,
    ModeRegion,
    RewardAccess,
    RewardTable,
    build_grid,
    default_nine_modes,
    length_mask,
    mode_cells,
    reward,
    sample_hidden_states,
)


def test_nine_modes_at_8():
    cells = sorted(mode_cells(GridSpec(8)))
    assert cells == sorted((a, b) for a in (1, 4, 7) for b in (1, 4, 7))


def test_nine_modes_formula_at_30():
    modes = default_nine_modes(30)
    side = math.ceil(30 / 8)
    corners = sorted({(m.a_lo, m.b_lo) for m in modes})
    want = sorted((math.floor((1 + 3 * i) * 30 / 8), math.floor((1 + 3 * j) * 30 / 8)) for i in range(3) for j in range(3))
    assert corners == want
    assert all(m.a_hi - m.a_lo + 1 == side or m.a_hi == 29 for m in modes)


def test_small_grid_rejects_default_modes():
    with pytest.raises(GridError):
        default_nine_modes(7)


def test_reward_counts_regions():
    spec = GridSpec(8)
    assert reward(spec, (1, 1)) == pytest.approx(1.001)
    assert reward(spec, (0, 0)) == pytest.approx(1e-3)
    overlap = GridSpec(4, (ModeRegion(0, 1, 0, 1), ModeRegion(1, 2, 1, 2)))
    assert reward(overlap, (1, 1)) == pytest.approx(2.001)


def test_partition_function_8x8():
    t = RewardTable.from_spec(GridSpec(8))
    assert t.Z == pytest.approx(64e-3 + 9.0)
    # the per-mode-cell ideal mass
    assert t[(1, 1)] / t.Z == pytest.approx(1.001 / 9.064)


def test_partition_function_30x30():
    # side ceil(30/8) = 4, corners 3, 14, 25 -> 9 regions of 16 cells, all inside the grid
    t = RewardTable.from_spec(GridSpec(30))
    assert t.Z == pytest.approx(900e-3 + 144.0)


def test_action_order_and_parents_order():
    g = build_grid(GridSpec(3, ()))
    assert g.children((1, 1)) == ((1, 2), (2, 1), "sf")
    assert g.children((2, 2)) == ("sf",)
    assert g.parents((1, 1)) == ((0, 1), (1, 0))
    s = g.spec.index((1, 1))
    assert g.action_mask[s].tolist() == [True, True, True]
    assert g.action_mask[g.spec.index((2, 0))].tolist() == [False, True, True]
    e = g.action_edge[s]
    assert g.edges[e[RIGHT]] == ((1, 1), (2, 1))
    assert g.edges[e[UP]] == ((1, 1), (1, 2))
    assert g.edges[e[TERMINATE]] == ((1, 1), "sf")


def test_source_cannot_be_hidden():
    with pytest.raises(GridError):
        HidingMask({(0, 0)})


@given(st.integers(2, 12), st.integers(0, 10**6), st.data())
def test_sampled_mask_properties(n, seed, data):
    spec = GridSpec(n, ())
    count = data.draw(st.integers(0, n * n - 2))
    m = sample_hidden_states(spec, count, seed)
    assert len(m) == count
    assert (0, 0) not in m
    assert m == sample_hidden_states(spec, count, seed)


def test_sample_excludes():
    spec = GridSpec(8)
    m = sample_hidden_states(spec, 40, 3, exclude=mode_cells(spec))
    assert not set(m.hidden) & set(mode_cells(spec))


def test_length_mask():
    spec = GridSpec(4, ())
    assert len(length_mask(spec, 6)) == 0
    assert set(length_mask(spec, 5).hidden) == {(3, 3)}
    assert length_mask(spec, 0).hidden == frozenset(x for x in spec.states() if x != (0, 0))
    assert length_mask(spec, 3).mode is HideMode.FORBID_TERMINATE
    with pytest.raises(GridError):
        length_mask(spec, 7)


def test_reward_access_logs_reads():
    t = RewardTable.from_spec(GridSpec(8))
    acc = RewardAccess(t)
    v = acc.log_reward([t.spec.index((1, 1)), 0])
    assert np.allclose(np.exp(v), [1.001, 1e-3])
    assert acc.states_read() == {(1, 1), (0, 0)}


@given(st.integers(2, 9))
def test_children_and_parents_ascend_by_index(n):
    g = build_grid(GridSpec(n, ()))
    for s in g.states:
        if s != g.sink:
            idx = [g.index[c] for c in g.children(s)]
            assert idx == sorted(idx)
        if s != g.source:
            idx = [g.index[p] for p in g.parents(s)]
            assert idx == sorted(idx)
    assert g.n_edges == n * n + 2 * n * (n - 1)
