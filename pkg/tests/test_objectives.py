import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gflowlab.dag import Trajectory, chain, enumerate_trajectories
from gflowlab.exact import state_visit_probs
from gflowlab.hypergrid import GridSpec, HideMode, HidingMask, RewardAccess, RewardTable, build_grid
from gflowlab.objectives import (
    HiddenFlow,
    LossError,
    db_loss,
    db_residuals,
    tb_loss,
    tb_losses,
    trajectory_db_loss,
    trajectory_rejected,
)
from gflowlab.policy import EdgePolicy, PolicyConfig, edge_policy, init_params
from gflowlab.theory import exact_minimizer
from oracles import random_walk, tb_loss_loop


def table(n, seed=0):
    spec = GridSpec(n, ())
    return RewardTable(spec, np.exp(np.random.default_rng(seed).normal(size=n * n)))


def exact_flow_policy(dag, t, kind="DB"):
    m = exact_minimizer(dag, t).edge_policy()
    visits = state_visit_probs(m, dag)
    with np.errstate(divide="ignore"):
        head = np.log(visits * t.Z)
    return EdgePolicy(m.log_pf, m.log_pb, None, head, kind)


def test_tb_zero_at_minimizer_and_quadratic_in_log_z():
    dag = build_grid(GridSpec(3, ()))
    t = table(3)
    m = exact_minimizer(dag, t).edge_policy()
    shifted = EdgePolicy(m.log_pf, m.log_pb, m.log_Z + 0.3)
    for tr in enumerate_trajectories(dag):
        assert tb_loss(tr, m, dag, t).value < 1e-18
        assert tb_loss(tr, shifted, dag, t).value == pytest.approx(0.09, abs=1e-12)


@given(st.integers(0, 2**31))
def test_tb_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    dag = build_grid(GridSpec(2, ()))
    t = table(2, seed)
    params = init_params(PolicyConfig(2, hidden=5, learn_backward=bool(seed % 2)), seed)
    params.theta *= 2.0
    params["log_Z"] = rng.normal()
    pol = edge_policy(params, dag)
    tr = random_walk(dag, rng)
    assert tb_loss(tr, pol, dag, t).value == pytest.approx(tb_loss_loop(params, dag, tr, t.__getitem__), rel=1e-12, abs=1e-14)


def test_batched_tb_matches_single():
    rng = np.random.default_rng(4)
    dag = build_grid(GridSpec(4, ()))
    t = table(4)
    params = init_params(PolicyConfig(4, hidden=6), 2)
    pol = edge_policy(params, dag)
    trajs = [random_walk(dag, rng) for _ in range(20)]
    batch = tb_losses(trajs, pol, dag, t).node
    assert np.allclose(batch, [tb_loss(tr, pol, dag, t).value for tr in trajs], rtol=1e-12, atol=1e-15)


def test_tb_same_terminal_same_forward_product():
    # uniform forward policy: both paths to (1,1) on a 2x2 grid have equal prod P_F
    from gflowlab.policy import uniform_forward

    dag = build_grid(GridSpec(2, ()))
    pol = uniform_forward(dag)
    pol.log_Z = 0.4
    t = table(2)
    a = Trajectory(((0, 0), (1, 0), (1, 1), "sf"))
    b = Trajectory(((0, 0), (0, 1), (1, 1), "sf"))
    assert tb_loss(a, pol, dag, t).value == pytest.approx(tb_loss(b, pol, dag, t).value, abs=1e-12)


def test_tb_needs_log_z():
    dag = build_grid(GridSpec(2, ()))
    params = init_params(PolicyConfig(2, hidden=3, parametrization="DB"), 0)
    with pytest.raises(LossError):
        tb_loss(Trajectory(((0, 0), "sf")), edge_policy(params, dag), dag, table(2))


def test_db_zero_at_exact_flows_2x2():
    dag = build_grid(GridSpec(2, ()))
    t = table(2)
    pol = exact_flow_policy(dag, t)
    for a, b in dag.edges:
        assert db_loss((a, b), pol, dag, t).value < 1e-24


def test_db_zero_everywhere_implies_tb_zero():
    dag = build_grid(GridSpec(4, ()))
    t = table(4, 3)
    pol = exact_flow_policy(dag, t)
    res = db_residuals(np.arange(dag.n_edges), pol, dag, t)
    assert np.max(np.abs(res)) < 1e-12
    tb = EdgePolicy(pol.log_pf, pol.log_pb, math.log(t.Z))
    assert max(tb_loss(tr, tb, dag, t).value for tr in enumerate_trajectories(dag)) < 1e-20


def test_db_single_state_chain():
    dag = chain()
    r = np.array([2.0, 1.0])
    ok = EdgePolicy(np.zeros(1), np.zeros(1), None, np.array([math.log(2.0), 0.0]), "DB")
    off = EdgePolicy(np.zeros(1), np.zeros(1), None, np.array([0.0, 0.0]), "DB")
    assert db_loss(("s0", "sf"), ok, dag, r).value == 0.0
    assert db_loss(("s0", "sf"), off, dag, r).value == pytest.approx(math.log(2.0) ** 2)


def test_db_interior_perturbation_is_quadratic():
    dag = build_grid(GridSpec(3, ()))
    t = table(3)
    pol = exact_flow_policy(dag, t)
    head = pol.log_flow_head.copy()
    head[dag.index[(1, 1)]] += 0.25
    bumped = EdgePolicy(pol.log_pf, pol.log_pb, None, head, "DB")
    assert db_loss(((0, 1), (1, 1)), bumped, dag, t).value == pytest.approx(0.0625, abs=1e-12)


def test_fldb_offset():
    dag = build_grid(GridSpec(3, ()))
    t = table(3)
    pol = exact_flow_policy(dag, t)
    # FL-DB with head = log F - log R is the same minimizer
    fl = EdgePolicy(pol.log_pf, pol.log_pb, None, pol.log_flow_head - np.append(t.log_values, 0.0)[: dag.n_states], "FL-DB")
    res = db_residuals(np.arange(dag.n_edges), fl, dag, t)
    assert np.max(np.abs(res)) < 1e-12


def test_db_rejects_tb_policy():
    dag = build_grid(GridSpec(2, ()))
    pol = EdgePolicy(np.zeros(dag.n_edges), np.zeros(dag.n_edges), 0.0)
    with pytest.raises(LossError):
        db_loss(((0, 0), "sf"), pol, dag, table(2))


def _random_flow_policy(dag, rng, kind):
    return EdgePolicy(rng.normal(size=dag.n_edges), rng.normal(size=dag.n_edges), None, rng.normal(size=dag.n_states), kind)


def test_trajectory_db_masking_terms():
    rng = np.random.default_rng(0)
    dag = build_grid(GridSpec(3, ()))
    t = table(3)
    tr = Trajectory(((0, 0), (1, 0), (1, 1), (2, 1), "sf"))
    edges = list(tr.transitions())
    db = _random_flow_policy(dag, rng, "DB")
    per = [db_loss(e, db, dag, t).value for e in edges]
    assert trajectory_db_loss(tr, db, dag, t).value == pytest.approx(sum(per))
    # DB, terminal hidden: only the terminating term goes
    m = HidingMask({(2, 1)})
    assert trajectory_db_loss(tr, db, dag, t, m).value == pytest.approx(sum(per[:-1]))
    # FL-DB, interior hidden: both adjacent terms go
    fl = _random_flow_policy(dag, rng, "FL-DB")
    full = [db_loss(e, fl, dag, t).value for e in edges]
    m = HidingMask({(1, 1)})
    assert trajectory_db_loss(tr, fl, dag, t, m).value == pytest.approx(full[0] + full[3])
    # unoffset keeps DB's term set
    assert trajectory_db_loss(tr, fl, dag, t, m, HiddenFlow.UNOFFSET).terms.size == 4


def test_tb_rejection_rules():
    tr = Trajectory(((0, 0), (1, 0), (1, 1), "sf"))
    assert trajectory_rejected(tr, HidingMask({(1, 0)}, HideMode.SKIP_TRAJECTORY))
    assert not trajectory_rejected(tr, HidingMask({(1, 0)}, HideMode.FORBID_TERMINATE))
    assert trajectory_rejected(tr, HidingMask({(1, 1)}, HideMode.FORBID_TERMINATE))


@pytest.mark.parametrize("kind", ["DB", "FL-DB"])
@pytest.mark.parametrize("mode", list(HideMode))
@pytest.mark.parametrize("hidden_flow", list(HiddenFlow))
def test_no_hidden_reward_reads(kind, mode, hidden_flow):
    rng = np.random.default_rng(1)
    dag = build_grid(GridSpec(4, ()))
    t = table(4)
    mask = HidingMask({(1, 1), (2, 0), (3, 3), (0, 2)}, mode)
    acc = RewardAccess(t)
    pol = _random_flow_policy(dag, rng, kind)
    for _ in range(200):
        trajectory_db_loss(random_walk(dag, rng), pol, dag, acc, mask, hidden_flow)
    assert acc.states_read()
    assert not acc.states_read() & mask.hidden
