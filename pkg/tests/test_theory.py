import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gflowlab.dag import PointedDag, chain, enumerate_trajectories
from gflowlab.exact import jsd, normalized_reward
from gflowlab.hypergrid import GridSpec, RewardTable, build_grid
from gflowlab.objectives import tb_loss
from gflowlab.theory import (
    backward_product_constant,
    beyond_iid_check,
    certify,
    exact_minimizer,
    perturb_rewards,
    random_beyond_iid_instance,
    reward_vector,
    stability_check,
    tv_lemma_check,
    write_csv,
)


def test_minimizer_on_chain_is_trivial():
    dag = chain("a")
    m = exact_minimizer(dag, {"a": 3.0})
    assert m.Z == 3.0
    assert np.allclose(m.probs, [1.0])


def test_minimizer_matches_hand_computation_2x2():
    # paths: (0,0)|, (0,0)(1,0)|, (0,0)(0,1)|, two paths to (1,1) with P_B = 1/2 each
    dag = build_grid(GridSpec(2, ()))
    r = RewardTable(GridSpec(2, ()), np.array([1.0, 2.0, 3.0, 4.0]))
    m = exact_minimizer(dag, r)
    by_path = {t.states: p for t, p in zip(m.trajectories, m.probs)}
    assert by_path[((0, 0), (1, 0), "sf")] == pytest.approx(3.0 / 10)
    assert by_path[((0, 0), (1, 0), (1, 1), "sf")] == pytest.approx(2.0 / 10)
    d = m.terminal_distribution()
    assert jsd(d, normalized_reward(r)) < 1e-15


def test_backward_constant():
    assert backward_product_constant(build_grid(GridSpec(3, ()))) == 1.0
    # every path into (1,1) crosses one state with two parents
    g = PointedDag.from_edges([("s0", "a"), ("s0", "b"), ("a", "c"), ("b", "c"), ("c", "sf")], "s0", "sf")
    assert backward_product_constant(g) == 0.5


@given(st.integers(0, 2**31), st.floats(1e-4, 0.5))
def test_perturbation_preserves_sum(seed, eps):
    dag = build_grid(GridSpec(3, ()))
    rng = np.random.default_rng(seed)
    r = reward_vector(dag, RewardTable(GridSpec(3, ()), np.exp(rng.normal(size=9))))
    r2 = perturb_rewards(dag, r, eps, rng)
    term = [dag.index[x] for x in dag.terminal_set]
    assert math.fsum(r2[term]) == pytest.approx(math.fsum(r[term]), abs=1e-12)
    diff = np.abs(r2[term] - r[term])
    assert diff.max() < eps and np.count_nonzero(diff) == 2


def test_stability_bound_holds_and_is_tight():
    dag = build_grid(GridSpec(3, ()))
    rng = np.random.default_rng(0)
    r = RewardTable(GridSpec(3, ()), np.exp(rng.normal(size=9)))
    reps = stability_check(dag, r, 0.05, 30, rng)
    assert all(x.passed for x in reps)
    assert max(x.lhs / x.rhs for x in reps) > 0.99


@given(st.integers(0, 2**31))
def test_tv_lemma_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 10))
    p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    h = rng.normal(size=n) * 3
    assert tv_lemma_check(h, p, q).passed


def test_tv_lemma_negative_control():
    p, q = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert tv_lemma_check([-1.0, 1.0], p, q).passed
    assert not tv_lemma_check([-1.0, 1.0], p, q, tv_scale=0.5).passed


@given(st.integers(0, 2**31))
def test_beyond_iid_chain(seed):
    dag, r, pol = random_beyond_iid_instance(np.random.default_rng(seed))
    for rep in beyond_iid_check(dag, r, pol):
        assert rep.passed, rep


def test_beyond_iid_zero_at_minimizer():
    dag = build_grid(GridSpec(3, ()))
    r = RewardTable(GridSpec(3, ()), np.arange(1.0, 10.0))
    reps = beyond_iid_check(dag, r, exact_minimizer(dag, r).edge_policy())
    for rep in reps:
        assert abs(rep.lhs) < 1e-12 and abs(rep.rhs) < 1e-5


def test_exact_minimizer_tb_zero_4x4():
    dag = build_grid(GridSpec(4, ()))
    r = RewardTable(GridSpec(4, ()), np.exp(np.random.default_rng(2).normal(size=16)))
    pol = exact_minimizer(dag, r).edge_policy()
    assert max(tb_loss(t, pol, dag, r).value for t in enumerate_trajectories(dag)) < 1e-18


def test_certify_small_and_negative_control(tmp_path):
    ok = certify(side=3, perturbations=10, lemma_trials=50, iid_trials=30)
    assert ok.passed
    bad = certify(side=3, perturbations=5, lemma_trials=50, iid_trials=30, inject_bug=True)
    assert not bad.passed
    assert all(r.witness for r in bad.failures())
    write_csv(bad.reports, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "check,lhs,rhs,slack,witness,pass"
    assert any(line.endswith(",fail") for line in lines[1:])


def test_certify_single_trajectory_dag():
    s = certify(perturbations=5, lemma_trials=10, iid_trials=5, dag=chain("a", "b"))
    assert s.passed
