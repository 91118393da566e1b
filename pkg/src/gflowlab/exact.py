"""Exact terminal distributions and divergences between them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import rel_entr

from gflowlab.dag import DEFAULT_TRAJECTORY_CAP, PointedDag, enumerate_trajectories
from gflowlab.hypergrid import GridSpec, RewardTable
from gflowlab.policy import EdgePolicy, PolicyParams, edge_policy


class SupportMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TerminalDistribution:
    states: tuple
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (len(self.states),):
            raise ValueError("one probability per state expected")
        object.__setattr__(self, "probs", p)

    def __getitem__(self, x) -> float:
        return float(self.probs[self.states.index(x)])

    def __len__(self):
        return len(self.states)

    def as_dict(self) -> dict:
        return dict(zip(self.states, self.probs.tolist()))

    def total(self) -> float:
        return math.fsum(self.probs)

    def as_grid(self, spec: GridSpec) -> np.ndarray:
        """N x N matrix, row = first coordinate, column = second."""
        out = np.zeros((spec.side, spec.side))
        for (a, b), p in zip(self.states, self.probs):
            out[a, b] = p
        return out


def _levels(dag: PointedDag):
    cached = getattr(dag, "_edge_levels", None)
    if cached is not None:
        return cached
    depth = {s: 0 for s in dag.states}
    for s in dag.topological_order():
        if s != dag.sink:
            for c in dag.children(s):
                depth[c] = max(depth[c], depth[s] + 1)
    src_depth = np.array([depth[a] for a, _ in dag.edges])
    levels = [np.flatnonzero(src_depth == d) for d in range(int(src_depth.max()) + 1)]
    dag._edge_levels = levels
    return levels


def _as_edge_policy(policy, dag) -> EdgePolicy:
    if isinstance(policy, PolicyParams):
        return edge_policy(policy, dag)
    return policy


def _terminals(dag: PointedDag):
    sink = dag.sink
    return tuple(s for s in dag.states if s in dag.terminal_set), np.array(
        [dag.edge_index[(s, sink)] for s in dag.states if s in dag.terminal_set], dtype=np.intp
    )


def state_visit_probs(policy, dag: PointedDag) -> np.ndarray:
    """Probability that a forward rollout passes through each state."""
    pf = np.exp(np.asarray(_as_edge_policy(policy, dag).numeric().log_pf, dtype=np.float64))
    mu = np.zeros(dag.n_states)
    mu[dag.index[dag.source]] = 1.0
    sink = dag.index[dag.sink]
    for edges in _levels(dag):
        # edges leaving states at one depth; their sources are all final already
        np.add.at(mu, dag.edge_dst[edges], mu[dag.edge_src[edges]] * pf[edges])
    mu[sink] = 0.0
    return mu


def exact_terminal_distribution(policy, dag: PointedDag) -> TerminalDistribution:
    """Termination probabilities by a forward pass over the DAG in depth order."""
    pf = np.exp(np.asarray(_as_edge_policy(policy, dag).numeric().log_pf, dtype=np.float64))
    mu = state_visit_probs(policy, dag)
    states, term = _terminals(dag)
    idx = np.array([dag.index[s] for s in states], dtype=np.intp)
    return TerminalDistribution(states, mu[idx] * pf[term])


def trajectory_probs(policy, dag: PointedDag, trajs) -> np.ndarray:
    lpf = np.asarray(_as_edge_policy(policy, dag).numeric().log_pf)
    return np.array([math.exp(lpf[dag.trajectory_edges(t)].sum()) for t in trajs])


def terminal_distribution_by_enumeration(policy, dag: PointedDag, cap: int = DEFAULT_TRAJECTORY_CAP) -> TerminalDistribution:
    """Brute force: sum of forward-probability products over every trajectory."""
    trajs = enumerate_trajectories(dag, cap)
    probs = trajectory_probs(policy, dag, trajs)
    states, _ = _terminals(dag)
    acc = {s: 0.0 for s in states}
    for t, p in zip(trajs, probs):
        acc[t.terminal] += p
    return TerminalDistribution(states, np.array([acc[s] for s in states]))


def normalized_reward(reward) -> TerminalDistribution:
    """``x -> R(x) / Z``."""
    if isinstance(reward, RewardTable):
        states, values = tuple(reward.spec.states()), reward.values
    else:
        states, values = tuple(reward), np.array(list(reward.values()), dtype=np.float64)
    z = math.fsum(values)
    if not z > 0:
        raise ValueError("total reward must be positive")
    return TerminalDistribution(states, np.asarray(values) / z)


def _pair(p, q):
    if isinstance(p, TerminalDistribution) and isinstance(q, TerminalDistribution):
        if p.states != q.states:
            raise SupportMismatch("distributions are indexed by different states")
        return p.probs, q.probs
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise SupportMismatch(f"shapes {p.shape} and {q.shape} differ")
    return p, q


def kl(p, q) -> float:
    """KL(P || Q) in nats; +inf when P is not absolutely continuous w.r.t. Q."""
    p, q = _pair(p, q)
    return float(np.sum(rel_entr(p, q)))


def tv(p, q) -> float:
    """Total variation, half the L1 distance."""
    p, q = _pair(p, q)
    return 0.5 * float(np.sum(np.abs(p - q)))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in nats, bounded by log 2."""
    p, q = _pair(p, q)
    m = 0.5 * (p + q)
    val = 0.5 * float(np.sum(rel_entr(p, m))) + 0.5 * float(np.sum(rel_entr(q, m)))
    return min(max(val, 0.0), math.log(2.0))


def write_csv_matrix(dist: TerminalDistribution, spec: GridSpec, path) -> Path:
    grid = dist.as_grid(spec)
    path = Path(path)
    with path.open("w") as fh:
        for row in grid:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return path


def read_csv_matrix(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_pgm(dist_or_grid, spec: GridSpec, path, maxval: int = 255) -> Path:
    """ASCII (P2) grayscale heatmap, brightest cell = largest probability."""
    grid = dist_or_grid.as_grid(spec) if isinstance(dist_or_grid, TerminalDistribution) else np.asarray(dist_or_grid)
    top = grid.max()
    levels = np.zeros(grid.shape, dtype=int) if top <= 0 else np.rint(grid / top * maxval).astype(int)
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"P2\n{grid.shape[1]} {grid.shape[0]}\n{maxval}\n")
        for row in levels:
            fh.write(" ".join(str(v) for v in row) + "\n")
    return path


def read_pgm(path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines() if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError("not an ASCII PGM file")
    w, h, _ = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array(tokens[4:], dtype=int).reshape(h, w)
