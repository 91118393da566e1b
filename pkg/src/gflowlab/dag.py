"""Pointed DAGs, trajectories and the brute-force oracles built on them.

States are arbitrary hashable ids; each one gets a dense integer index at
construction time. Edges are numbered too, so that per-edge quantities
(forward log-probabilities, backward log-probabilities, flows) can be stored
as flat numpy arrays and indexed by a trajectory's edge list.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

State = Hashable

DEFAULT_TRAJECTORY_CAP = 10**7


class DagError(ValueError):
    """Raised for malformed graphs or invalid queries against one."""


class CycleError(DagError):
    def __init__(self, edge):
        super().__init__(f"cycle detected through back-edge {edge[0]!r} -> {edge[1]!r}")
        self.edge = edge


class TrajectoryCapExceeded(DagError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """A complete path ``s0 -> ... -> x -> sink``."""

    states: tuple

    @property
    def length(self) -> int:
        # number of transitions between grid states, i.e. n in s0..sn
        return len(self.states) - 2

    @property
    def terminal(self):
        return self.states[-2]

    def transitions(self):
        return list(zip(self.states[:-1], self.states[1:]))

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)


class PointedDag:
    """Immutable DAG with a unique source and a unique sink.

    ``children`` maps every non-sink state to an ordered sequence of its
    successors. The order given is kept (it defines action ids); use
    :meth:`from_edges` to get ascending-index order instead.
    """

    def __init__(self, states: Sequence[State], children: dict, source: State, sink: State):
        self.states = tuple(states)
        self.index = {s: i for i, s in enumerate(self.states)}
        if len(self.index) != len(self.states):
            raise DagError("duplicate state ids")
        if source not in self.index or sink not in self.index:
            raise DagError("source and sink must be listed among the states")
        self.source = source
        self.sink = sink

        self._children = {}
        parents = {s: [] for s in self.states}
        edges = []
        for s in self.states:
            kids = tuple(children.get(s, ()))
            if s == sink and kids:
                raise DagError("sink must have no outgoing edges")
            for c in kids:
                if c not in self.index:
                    raise DagError(f"edge to unknown state {c!r}")
                edges.append((s, c))
                parents[c].append(s)
            self._children[s] = kids
        if len(set(edges)) != len(edges):
            raise DagError("duplicate edges")
        self._parents = {s: tuple(sorted(p, key=self.index.__getitem__)) for s, p in parents.items()}

        self.edges = tuple(edges)
        self.edge_index = {e: i for i, e in enumerate(self.edges)}
        self.edge_src = np.array([self.index[a] for a, _ in self.edges], dtype=np.intp)
        self.edge_dst = np.array([self.index[b] for _, b in self.edges], dtype=np.intp)
        self.terminal_set = frozenset(p for p in self._parents[sink])
        self._out_edges = {s: tuple(self.edge_index[(s, c)] for c in self._children[s]) for s in self.states}

        self._validate()

    @classmethod
    def from_edges(cls, edges: Iterable[tuple], source: State, sink: State, states: Sequence[State] | None = None):
        edges = list(edges)
        if states is None:
            seen = {source: None}
            for a, b in edges:
                seen.setdefault(a, None)
                seen.setdefault(b, None)
            seen.pop(sink, None)
            seen[sink] = None
            states = list(seen)
        index = {s: i for i, s in enumerate(states)}
        children = {s: [] for s in states}
        for a, b in edges:
            if a not in index or b not in index:
                raise DagError(f"edge {(a, b)!r} references an unknown state")
            children[a].append(b)
        for s in children:
            children[s].sort(key=index.__getitem__)
        return cls(states, children, source, sink)

    def _validate(self):
        sources = [s for s in self.states if not self._parents[s]]
        sinks = [s for s in self.states if not self._children[s]]
        if sources != [self.source]:
            raise DagError(f"expected unique source {self.source!r}, in-degree 0 states: {sources!r}")
        if sinks != [self.sink]:
            raise DagError(f"expected unique sink {self.sink!r}, out-degree 0 states: {sinks!r}")
        order = self.topological_order()
        # a unique source/sink in a DAG already implies reachability; keep the
        # explicit check cheap and independent of that argument anyway
        reach = {self.source}
        for s in order:
            if s in reach:
                reach.update(self._children[s])
        if len(reach) != len(self.states):
            raise DagError("some states are unreachable from the source")

    def __len__(self):
        return len(self.states)

    def __repr__(self):
        return f"PointedDag(states={len(self.states)}, edges={len(self.edges)})"

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def _check(self, s):
        if s not in self.index:
            raise DagError(f"unknown state {s!r}")

    def children(self, s: State) -> tuple:
        self._check(s)
        if s == self.sink:
            raise DagError("the sink has no children")
        return self._children[s]

    def parents(self, s: State) -> tuple:
        self._check(s)
        if s == self.source:
            raise DagError("the source has no parents")
        return self._parents[s]

    def out_edges(self, s: State) -> tuple:
        self._check(s)
        return self._out_edges[s]

    def max_out_degree(self) -> int:
        return max(len(k) for k in self._children.values())

    def topological_order(self) -> list:
        """Kahn's algorithm; ties are broken by ascending state index."""
        indeg = {s: len(self._parents[s]) for s in self.states}
        ready = deque(s for s in self.states if indeg[s] == 0)
        order = []
        while ready:
            s = ready.popleft()
            order.append(s)
            for c in self._children[s]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self.states):
            raise CycleError(self._find_back_edge())
        return order

    def _find_back_edge(self):
        color = {s: 0 for s in self.states}
        for root in self.states:
            if color[root]:
                continue
            stack = [(root, iter(self._children[root]))]
            color[root] = 1
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    color[node] = 2
                    stack.pop()
                elif color[nxt] == 1:
                    return (node, nxt)
                elif color[nxt] == 0:
                    color[nxt] = 1
                    stack.append((nxt, iter(self._children[nxt])))
        raise AssertionError("no back-edge found in a graph that failed to sort")

    def trajectory_edges(self, traj: Trajectory | Sequence[State]) -> np.ndarray:
        states = traj.states if isinstance(traj, Trajectory) else tuple(traj)
        try:
            return np.array([self.edge_index[e] for e in zip(states[:-1], states[1:])], dtype=np.intp)
        except KeyError as exc:
            raise DagError(f"not an edge: {exc.args[0]!r}") from None

    def is_trajectory(self, traj: Trajectory | Sequence[State]) -> bool:
        states = traj.states if isinstance(traj, Trajectory) else tuple(traj)
        if len(states) < 2 or states[0] != self.source or states[-1] != self.sink:
            return False
        if states[-2] not in self.terminal_set:
            return False
        return all(e in self.edge_index for e in zip(states[:-1], states[1:]))


def children(dag: PointedDag, s: State) -> tuple:
    return dag.children(s)


def parents(dag: PointedDag, s: State) -> tuple:
    return dag.parents(s)


def topological_order(dag: PointedDag) -> list:
    return dag.topological_order()


def enumerate_trajectories(dag: PointedDag, cap: int = DEFAULT_TRAJECTORY_CAP) -> list[Trajectory]:
    """Every source-to-sink path, depth first in child order."""
    total = count_trajectories(dag)
    if total > cap:
        raise TrajectoryCapExceeded(f"{total} trajectories exceed the cap of {cap}")
    out = []
    stack = [(dag.source,)]
    while stack:
        path = stack.pop()
        last = path[-1]
        if last == dag.sink:
            out.append(Trajectory(path))
            continue
        for c in reversed(dag.children(last)):
            stack.append(path + (c,))
    return out


def count_trajectories(dag: PointedDag) -> int:
    """Number of source-to-sink paths by dynamic programming (exact ints)."""
    counts = {s: 0 for s in dag.states}
    counts[dag.source] = 1
    for s in dag.topological_order():
        if s == dag.sink:
            continue
        for c in dag.children(s):
            counts[c] += counts[s]
    return counts[dag.sink]


def path_counts(dag: PointedDag) -> dict:
    """Number of distinct source-to-s paths for every state s."""
    counts = {s: 0 for s in dag.states}
    counts[dag.source] = 1
    for s in dag.topological_order():
        if s != dag.sink:
            for c in dag.children(s):
                counts[c] += counts[s]
    return counts


def chain(*inner: State, source="s0", sink="sf") -> PointedDag:
    """``source -> inner[0] -> ... -> sink``; handy for degenerate tests."""
    seq = (source,) + tuple(inner) + (sink,)
    return PointedDag.from_edges(zip(seq[:-1], seq[1:]), source, sink, states=seq)
