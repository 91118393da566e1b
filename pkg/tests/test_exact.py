import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.distance import jensenshannon

from gflowlab.dag import enumerate_trajectories
from gflowlab.exact import (
    SupportMismatch,
    TerminalDistribution,
    exact_terminal_distribution,
    jsd,
    kl,
    normalized_reward,
    read_csv_matrix,
    read_pgm,
    terminal_distribution_by_enumeration,
    trajectory_probs,
    tv,
    write_csv_matrix,
    write_pgm,
)
from gflowlab.hypergrid import GridSpec, RewardTable, build_grid
from gflowlab.policy import PolicyConfig, edge_policy, init_params, uniform_forward
from gflowlab.theory import random_tabular_policy
from oracles import jsd_direct

simplex = st.integers(2, 8).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(1e-3, 1.0), min_size=n, max_size=n), st.lists(st.floats(1e-3, 1.0), min_size=n, max_size=n)
    )
)


def dist(vals):
    v = np.asarray(vals, dtype=np.float64)
    return TerminalDistribution(tuple(range(len(v))), v / v.sum())


@given(simplex)
def test_divergence_properties(pq):
    p, q = dist(pq[0]), dist(pq[1])
    j = jsd(p, q)
    assert 0.0 <= j <= math.log(2) + 1e-15
    assert j == pytest.approx(jsd(q, p), abs=1e-15)
    assert j == pytest.approx(jsd_direct(p.probs, q.probs), abs=1e-12)
    assert j == pytest.approx(jensenshannon(p.probs, q.probs) ** 2, abs=1e-12)
    assert kl(p, q) >= 0.0
    # Pinsker
    assert tv(p, q) <= math.sqrt(kl(p, q) / 2) + 1e-12
    assert jsd(p, p) == 0.0


def test_jsd_disjoint_is_log2():
    p = TerminalDistribution(("a", "b"), [1.0, 0.0])
    q = TerminalDistribution(("a", "b"), [0.0, 1.0])
    assert jsd(p, q) == pytest.approx(math.log(2))
    assert tv(p, q) == 1.0
    assert kl(p, q) == math.inf


def test_support_mismatch():
    with pytest.raises(SupportMismatch):
        jsd(TerminalDistribution(("a",), [1.0]), TerminalDistribution(("b",), [1.0]))


@pytest.mark.parametrize("n", [2, 3, 4])
def test_dp_matches_enumeration_random_tabular(n):
    rng = np.random.default_rng(n)
    dag = build_grid(GridSpec(n, ()))
    for _ in range(10):
        pol = random_tabular_policy(dag, rng, scale=2.0)
        a = exact_terminal_distribution(pol, dag)
        b = terminal_distribution_by_enumeration(pol, dag)
        assert np.max(np.abs(a.probs - b.probs)) < 1e-14
        assert a.total() == pytest.approx(1.0, abs=1e-14)


def test_trajectory_probs_sum_to_one():
    dag = build_grid(GridSpec(4, ()))
    pol = edge_policy(init_params(PolicyConfig(4, hidden=5), 1), dag)
    assert math.fsum(trajectory_probs(pol, dag, enumerate_trajectories(dag))) == pytest.approx(1.0, abs=1e-14)


def test_normalized_reward():
    t = RewardTable.from_spec(GridSpec(8))
    nr = normalized_reward(t)
    assert nr.total() == pytest.approx(1.0)
    assert nr[(4, 4)] == pytest.approx(1.001 / 9.064)


def test_csv_and_pgm_round_trip(tmp_path):
    spec = GridSpec(3, ())
    dag = build_grid(spec)
    d = exact_terminal_distribution(uniform_forward(dag), dag)
    m = read_csv_matrix(write_csv_matrix(d, spec, tmp_path / "d.csv"))
    assert m.shape == (3, 3)
    assert np.array_equal(m, d.as_grid(spec))
    img = read_pgm(write_pgm(d, spec, tmp_path / "d.pgm"))
    assert img.shape == (3, 3)
    assert img.max() == 255 and img.min() >= 0
