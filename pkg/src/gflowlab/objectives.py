"""Trajectory balance, detailed balance and forward-looking detailed balance.

Losses are written against an :class:`~gflowlab.policy.EdgePolicy`, so the
same code differentiates through a tape (when the policy arrays are tape
variables) or evaluates plain floats (tabular policies, exact checks).

Rewards are always passed as a *source*: a :class:`RewardTable`, a
:class:`RewardAccess` (instrumented), or an array of rewards indexed by DAG
state index. Every loss reads rewards only for the terms it keeps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from gflowlab.autodiff import Var
from gflowlab.dag import PointedDag, Trajectory
from gflowlab.hypergrid import HideMode, HidingMask, RewardAccess, RewardTable
from gflowlab.policy import EdgePolicy, Parametrization


class LossError(ValueError):
    pass


@dataclass
class LossValue:
    node: object
    terms: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def value(self) -> float:
        return float(self.node.value if isinstance(self.node, Var) else self.node)

    def __float__(self):
        return self.value


def log_reward(source, idx) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(idx, dtype=np.intp))
    if isinstance(source, RewardAccess):
        return source.log_reward(idx)
    values = source.values if isinstance(source, RewardTable) else np.asarray(source, dtype=np.float64)
    r = values[idx]
    if np.any(~(r > 0)):
        raise LossError("rewards must be positive")
    return np.log(r)


def _value(x):
    return x.value if isinstance(x, Var) else x


def hidden_array(mask: HidingMask | None, dag: PointedDag) -> np.ndarray:
    out = np.zeros(dag.n_states, dtype=bool)
    if mask is not None:
        for x in mask.hidden:
            out[dag.index[x]] = True
    return out


def trajectory_rejected(traj: Trajectory, mask: HidingMask | None) -> bool:
    """Whether TB training must skip ``traj`` under ``mask``."""
    if mask is None or not mask.hidden:
        return False
    if mask.mode is HideMode.FORBID_TERMINATE:
        return traj.terminal in mask.hidden
    return any(s in mask.hidden for s in traj.states[:-1])


def tb_loss(traj: Trajectory, policy: EdgePolicy, dag: PointedDag, reward) -> LossValue:
    """``(log Z + sum log P_F - log R(x) - sum log P_B)^2`` for one trajectory."""
    if policy.log_Z is None:
        raise LossError("TB needs a log Z estimate")
    edges = dag.trajectory_edges(traj)
    lr = log_reward(reward, dag.index[traj.terminal])[0]
    ratio = policy.log_Z + policy.log_pf[edges].sum() - lr - policy.log_pb[edges].sum()
    return LossValue(ratio * ratio, np.array([_value(ratio)]))


def incidence(dag: PointedDag, trajs) -> np.ndarray:
    a = np.zeros((len(trajs), dag.n_edges))
    for i, t in enumerate(trajs):
        a[i, dag.trajectory_edges(t)] = 1.0
    return a


def tb_losses(trajs, policy: EdgePolicy, dag: PointedDag, reward) -> LossValue:
    """Per-trajectory TB losses for a batch, as one vector."""
    if policy.log_Z is None:
        raise LossError("TB needs a log Z estimate")
    a = incidence(dag, trajs)
    lr = log_reward(reward, [dag.index[t.terminal] for t in trajs])
    ratio = policy.log_Z + a @ policy.log_pf - lr - a @ policy.log_pb
    return LossValue(ratio * ratio, np.asarray(_value(ratio)))


def _flow_kind(policy: EdgePolicy) -> Parametrization:
    kind = Parametrization(policy.parametrization)
    if kind is Parametrization.TB or policy.log_flow_head is None:
        raise LossError("detailed balance needs a state-flow head (DB or FL-DB parametrization)")
    return kind


class HiddenFlow(str, enum.Enum):
    """How FL-DB treats a state whose reward is hidden.

    ``omit`` drops every term that touches such a state. ``unoffset`` keeps
    the term and uses the bare learned flow ``log F(s) = head(s)`` there, so
    FL-DB keeps exactly the terms DB keeps.
    """

    OMIT = "omit"
    UNOFFSET = "unoffset"


def kept_transitions(dag: PointedDag, edges, kind: Parametrization, hidden: np.ndarray, hidden_flow=HiddenFlow.OMIT) -> np.ndarray:
    """Boolean per edge: can the DB term be formed without a hidden reward?"""
    edges = np.asarray(edges, dtype=np.intp)
    src = dag.edge_src[edges]
    dst = dag.edge_dst[edges]
    to_sink = dst == dag.index[dag.sink]
    if kind is Parametrization.DB or HiddenFlow(hidden_flow) is HiddenFlow.UNOFFSET:
        # only the terminating transition needs R
        return ~(to_sink & hidden[src])
    dst_hidden = np.where(to_sink, False, hidden[np.where(to_sink, 0, dst)])
    return ~(hidden[src] | dst_hidden)


def db_residuals(edges, policy: EdgePolicy, dag: PointedDag, reward, hidden: np.ndarray | None = None):
    """Signed DB residuals for the given edges.

    No terms are dropped here; ``hidden`` only removes the FL-DB reward
    offset at hidden states (see :class:`HiddenFlow`).
    """
    kind = _flow_kind(policy)
    edges = np.asarray(edges, dtype=np.intp)
    src = dag.edge_src[edges]
    dst = dag.edge_dst[edges]
    to_sink = dst == dag.index[dag.sink]
    dst_safe = np.where(to_sink, src, dst)
    head = policy.log_flow_head

    offset_ok = np.ones(dag.n_states, dtype=bool) if hidden is None else ~hidden
    if kind is Parametrization.FLDB:
        need = np.union1d(src[to_sink], np.union1d(src, dst_safe)[offset_ok[np.union1d(src, dst_safe)]])
    else:
        need = np.unique(src[to_sink])
    lr = np.zeros(dag.n_states)
    if need.size:
        lr[need] = log_reward(reward, need)

    # FL-DB: log F(s) = log R(s) + head(s)
    offset = np.where(offset_ok, lr, 0.0) if kind is Parametrization.FLDB else np.zeros(dag.n_states)
    log_f_src = head[src] + offset[src]
    log_f_dst = head[dst_safe] + offset[dst_safe]
    # terminating transitions match the flow against the reward
    target = to_sink.astype(np.float64)
    inner = 1.0 - target
    return log_f_src + policy.log_pf[edges] - log_f_dst * inner - policy.log_pb[edges] * inner - lr[src] * target


def db_loss(transition, policy: EdgePolicy, dag: PointedDag, reward) -> LossValue:
    """Squared DB residual of a single edge ``(s, s')``."""
    try:
        e = dag.edge_index[tuple(transition)]
    except KeyError:
        raise LossError(f"{transition!r} is not an edge") from None
    res = db_residuals([e], policy, dag, reward)
    return LossValue((res * res).sum(), np.asarray(_value(res)))


def trajectory_db_loss(
    traj: Trajectory, policy: EdgePolicy, dag: PointedDag, reward, mask: HidingMask | None = None, hidden_flow=HiddenFlow.OMIT
) -> LossValue:
    """Sum of DB terms over ``traj``, skipping those that would read a hidden reward."""
    kind = _flow_kind(policy)
    hidden = hidden_array(mask, dag)
    edges = dag.trajectory_edges(traj)
    edges = edges[kept_transitions(dag, edges, kind, hidden, hidden_flow)]
    if edges.size == 0:
        return LossValue(np.float64(0.0), np.zeros(0))
    res = db_residuals(edges, policy, dag, reward, hidden)
    return LossValue((res * res).sum(), np.asarray(_value(res)))


def batch_db_losses(trajs, policy: EdgePolicy, dag: PointedDag, reward, hidden: np.ndarray | None = None, hidden_flow=HiddenFlow.OMIT):
    """Per-trajectory DB losses for a batch (vector) and the number of kept terms."""
    kind = _flow_kind(policy)
    if hidden is None:
        hidden = np.zeros(dag.n_states, dtype=bool)
    edges = [dag.trajectory_edges(t) for t in trajs]
    owner = np.concatenate([np.full(e.size, i) for i, e in enumerate(edges)])
    edges = np.concatenate(edges)
    keep = kept_transitions(dag, edges, kind, hidden, hidden_flow)
    edges, owner = edges[keep], owner[keep]
    if edges.size == 0:
        return None, 0
    res = db_residuals(edges, policy, dag, reward, hidden)
    seg = np.zeros((len(trajs), edges.size))
    seg[owner, np.arange(edges.size)] = 1.0
    return seg @ (res * res), int(edges.size)


def trajectory_log_prob(traj: Trajectory, policy: EdgePolicy, dag: PointedDag) -> float:
    """log of the product of forward probabilities along ``traj``."""
    return float(np.sum(_value(policy.log_pf)[dag.trajectory_edges(traj)]))
