"""Two-dimensional hypergrid: states, actions, the nine-mode reward and hiding masks."""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from gflowlab.dag import PointedDag

SINK = "sf"
BASE_REWARD = 1e-3

# action ids of the forward head
RIGHT, UP, TERMINATE = 0, 1, 2
N_ACTIONS = 3


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class ModeRegion:
    """Closed rectangle ``[a_lo, a_hi] x [b_lo, b_hi]``."""

    a_lo: int
    a_hi: int
    b_lo: int
    b_hi: int

    def __post_init__(self):
        if self.a_lo > self.a_hi or self.b_lo > self.b_hi:
            raise GridError(f"empty mode region {self}")

    def __contains__(self, x) -> bool:
        a, b = x
        return self.a_lo <= a <= self.a_hi and self.b_lo <= b <= self.b_hi

    def cells(self):
        return [(a, b) for a in range(self.a_lo, self.a_hi + 1) for b in range(self.b_lo, self.b_hi + 1)]


def default_nine_modes(n: int) -> list[ModeRegion]:
    """Nine square modes on a 3x3 lattice, side ceil(n/8)."""
    if n < 8:
        raise GridError(f"nine default modes need a side of at least 8, got {n}")
    side = -(-n // 8)
    regions = []
    for i in range(3):
        for j in range(3):
            a0 = ((1 + 3 * i) * n) // 8
            b0 = ((1 + 3 * j) * n) // 8
            regions.append(ModeRegion(a0, min(a0 + side - 1, n - 1), b0, min(b0 + side - 1, n - 1)))
    return regions


@dataclass(frozen=True)
class GridSpec:
    side: int
    modes: tuple = None

    def __post_init__(self):
        if int(self.side) != self.side or self.side < 2:
            raise GridError(f"grid side must be an integer >= 2, got {self.side!r}")
        modes = self.modes
        if modes is None:
            modes = default_nine_modes(self.side) if self.side >= 8 else ()
        modes = tuple(modes)
        for m in modes:
            if m.a_lo < 0 or m.b_lo < 0 or m.a_hi >= self.side or m.b_hi >= self.side:
                raise GridError(f"mode region {m} lies outside a {self.side}x{self.side} grid")
        object.__setattr__(self, "modes", modes)

    @property
    def n_states(self) -> int:
        return self.side * self.side

    def states(self) -> list[tuple]:
        return [(a, b) for a in range(self.side) for b in range(self.side)]

    def index(self, x) -> int:
        a, b = x
        return a * self.side + b

    def contains(self, x) -> bool:
        return (
            isinstance(x, tuple)
            and len(x) == 2
            and all(isinstance(v, (int, np.integer)) for v in x)
            and 0 <= x[0] < self.side
            and 0 <= x[1] < self.side
        )


class GridDag(PointedDag):
    """Hypergrid DAG with lookup tables from (state, action) to edge ids.

    Grid state ``(a, b)`` has index ``a * N + b``; the sink comes last.
    Children and parents are both listed in ascending index order:
    ``(a, b+1)``, ``(a+1, b)``, sink and ``(a-1, b)``, ``(a, b-1)``. The action
    tables map the fixed action slots (right, up, terminate) onto edges.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        n = spec.side
        states = spec.states() + [SINK]
        kids = {}
        for a, b in spec.states():
            out = []
            if b + 1 < n:
                out.append((a, b + 1))
            if a + 1 < n:
                out.append((a + 1, b))
            out.append(SINK)
            kids[(a, b)] = out
        super().__init__(states, kids, (0, 0), SINK)

        n2 = spec.n_states
        self.coords = np.array(spec.states(), dtype=np.intp)
        # action_edge[i, k]: edge id of action k at grid state i, -1 if invalid
        self.action_edge = np.full((n2, N_ACTIONS), -1, dtype=np.intp)
        # parent_edge[i, k]: edge into state i from (a-1,b) (k=0) or (a,b-1) (k=1)
        self.parent_edge = np.full((n2, 2), -1, dtype=np.intp)
        for eid, (p, c) in enumerate(self.edges):
            i = self.index[p]
            if c == SINK:
                self.action_edge[i, TERMINATE] = eid
                continue
            j = self.index[c]
            k = RIGHT if c[0] == p[0] + 1 else UP
            self.action_edge[i, k] = eid
            self.parent_edge[j, k] = eid
        self.action_mask = self.action_edge >= 0
        self.parent_mask = self.parent_edge >= 0
        self.n_parents = self.parent_mask.sum(axis=1)
        # edge -> (row, action) of the forward table and (row, slot) of the backward table
        self.edge_action = np.empty(self.n_edges, dtype=np.intp)
        self.edge_back_slot = np.full(self.n_edges, -1, dtype=np.intp)
        for i in range(n2):
            for k in range(N_ACTIONS):
                e = self.action_edge[i, k]
                if e >= 0:
                    self.edge_action[e] = k
            for k in range(2):
                e = self.parent_edge[i, k]
                if e >= 0:
                    self.edge_back_slot[e] = k
        self.terminate_edges = self.action_edge[:, TERMINATE].copy()


def build_grid(spec: GridSpec) -> GridDag:
    return GridDag(spec)


def reward(spec: GridSpec, x) -> float:
    if not spec.contains(x):
        raise GridError(f"{x!r} is not a state of the {spec.side}x{spec.side} grid")
    return BASE_REWARD + sum(1 for m in spec.modes if x in m)


def mode_cells(spec: GridSpec) -> list[tuple]:
    cells = set()
    for m in spec.modes:
        cells.update(m.cells())
    return sorted(cells)


@dataclass(frozen=True)
class RewardTable:
    """Rewards of every grid state, stored by state index."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)
    Z: float = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.spec.n_states,):
            raise GridError(f"expected {self.spec.n_states} reward values, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise GridError("rewards must be finite and positive")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "Z", math.fsum(v))

    @classmethod
    def from_spec(cls, spec: GridSpec) -> "RewardTable":
        return cls(spec, np.array([reward(spec, x) for x in spec.states()]))

    def __getitem__(self, x) -> float:
        return float(self.values[self.spec.index(x)])

    @property
    def log_values(self) -> np.ndarray:
        return np.log(self.values)


class HideMode(str, enum.Enum):
    SKIP_TRAJECTORY = "skip-trajectory"
    FORBID_TERMINATE = "forbid-terminate"


@dataclass(frozen=True)
class HidingMask:
    hidden: frozenset = frozenset()
    mode: HideMode = HideMode.SKIP_TRAJECTORY

    def __post_init__(self):
        object.__setattr__(self, "hidden", frozenset(self.hidden))
        object.__setattr__(self, "mode", HideMode(self.mode))
        if (0, 0) in self.hidden:
            raise GridError("the source (0, 0) cannot be hidden")

    def __len__(self):
        return len(self.hidden)

    def __contains__(self, x):
        return x in self.hidden

    def as_array(self, spec: GridSpec) -> np.ndarray:
        """Boolean array over state indices, True where hidden."""
        out = np.zeros(spec.n_states, dtype=bool)
        for x in self.hidden:
            out[spec.index(x)] = True
        return out

    def with_mode(self, mode) -> "HidingMask":
        return HidingMask(self.hidden, HideMode(mode))


def sample_hidden_states(spec: GridSpec, count: int, seed, mode=HideMode.SKIP_TRAJECTORY, exclude: Iterable = ()) -> HidingMask:
    """Uniform sample of ``count`` states without replacement, never (0, 0)."""
    pool = [x for x in spec.states() if x != (0, 0) and x not in set(exclude)]
    if count < 0 or count >= spec.n_states - 1 or count > len(pool):
        raise GridError(f"cannot hide {count} states of a {spec.side}x{spec.side} grid")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=count, replace=False)
    return HidingMask(frozenset(pool[i] for i in picks), mode)


def length_mask(spec: GridSpec, max_len: int, mode=HideMode.FORBID_TERMINATE) -> HidingMask:
    """Hide every state whose coordinate sum exceeds ``max_len``."""
    if not 0 <= max_len <= 2 * (spec.side - 1):
        raise GridError(f"max_len must lie in [0, {2 * (spec.side - 1)}], got {max_len}")
    return HidingMask(frozenset(x for x in spec.states() if x[0] + x[1] > max_len), mode)


class RewardAccess:
    """Read-only view of a reward table that logs every state it is asked for.

    Training code reads rewards exclusively through this object, so the log
    is a complete record of which rewards an objective ever looked at.
    """

    def __init__(self, table: RewardTable):
        self._log_values = table.log_values
        self.spec = table.spec
        self.reads = Counter()

    def log_reward(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.intp))
        self.reads.update(idx.tolist())
        return self._log_values[idx]

    def states_read(self) -> set:
        n = self.spec.side
        return {(i // n, i % n) for i in self.reads}
