"""MLP forward/backward policies, log Z and state-flow heads for the hypergrid.

All learnable scalars live in one flat float64 vector ``theta``; the layout
assigns each named tensor a slice of it. A shared tanh trunk feeds separate
linear heads:

    pf    3 logits  (right, up, terminate), masked to the valid actions
    pb    2 logits  (came from (a-1,b), came from (a,b-1)), learned P_B only
    flow  1 scalar  per-state log-flow residual, DB / FL-DB only
    log_Z scalar, TB only
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from gflowlab.autodiff import Tape, Var, masked_log_softmax
from gflowlab.dag import PointedDag
from gflowlab.hypergrid import N_ACTIONS, GridDag, GridSpec


class Parametrization(str, enum.Enum):
    TB = "TB"
    DB = "DB"
    FLDB = "FL-DB"


class Encoding(str, enum.Enum):
    ONEHOT = "onehot"
    SCALAR = "scalar"


def encode_state(spec: GridSpec, s, encoding=Encoding.ONEHOT) -> np.ndarray:
    """One-hot per coordinate (length 2N), or the two coordinates scaled to [0, 1]."""
    a, b = s
    n = spec.side
    if Encoding(encoding) is Encoding.SCALAR:
        return np.array([a / (n - 1), b / (n - 1)], dtype=np.float64)
    out = np.zeros(2 * n)
    out[a] = 1.0
    out[n + b] = 1.0
    return out


def encode_grid(spec: GridSpec, encoding=Encoding.ONEHOT) -> np.ndarray:
    return np.stack([encode_state(spec, s, encoding) for s in spec.states()])


@dataclass(frozen=True)
class PolicyConfig:
    side: int
    hidden: int = 64
    layers: int = 2
    encoding: Encoding = Encoding.ONEHOT
    parametrization: Parametrization = Parametrization.TB
    learn_backward: bool = False

    def __post_init__(self):
        object.__setattr__(self, "encoding", Encoding(self.encoding))
        object.__setattr__(self, "parametrization", Parametrization(self.parametrization))
        if self.hidden < 1 or self.layers < 1:
            raise ValueError("hidden width and layer count must be positive")

    @property
    def input_dim(self) -> int:
        return 2 * self.side if self.encoding is Encoding.ONEHOT else 2

    def layout(self) -> list[tuple[str, tuple]]:
        shapes = []
        d = self.input_dim
        for i in range(self.layers):
            shapes += [(f"trunk.{i}.w", (d, self.hidden)), (f"trunk.{i}.b", (self.hidden,))]
            d = self.hidden
        shapes += [("pf.w", (d, N_ACTIONS)), ("pf.b", (N_ACTIONS,))]
        if self.learn_backward:
            shapes += [("pb.w", (d, 2)), ("pb.b", (2,))]
        if self.parametrization is Parametrization.TB:
            shapes.append(("log_Z", ()))
        else:
            shapes += [("flow.w", (d, 1)), ("flow.b", (1,))]
        return shapes


def _slices(layout):
    out = {}
    start = 0
    for name, shape in layout:
        size = int(np.prod(shape)) if shape else 1
        out[name] = (slice(start, start + size), shape)
        start += size
    return out, start


@dataclass
class PolicyParams:
    config: PolicyConfig
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        self._slices, size = _slices(self.config.layout())
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (size,):
            raise ValueError(f"expected {size} parameters, got shape {self.theta.shape}")

    @property
    def size(self) -> int:
        return self.theta.size

    @property
    def names(self) -> list[str]:
        return list(self._slices)

    def slice_of(self, name: str) -> slice:
        return self._slices[name][0]

    def __getitem__(self, name: str) -> np.ndarray:
        sl, shape = self._slices[name]
        return self.theta[sl].reshape(shape)

    def __setitem__(self, name: str, value):
        sl, shape = self._slices[name]
        self.theta[sl] = np.broadcast_to(np.asarray(value, dtype=np.float64), shape).ravel()

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.config, self.theta.copy())

    def with_theta(self, theta) -> "PolicyParams":
        return PolicyParams(self.config, np.asarray(theta, dtype=np.float64))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)))

    def zero_heads(self) -> "PolicyParams":
        """Copy with every output head zeroed (uniform policies, unit flows)."""
        out = self.copy()
        for name in out.names:
            if not name.startswith("trunk."):
                out[name] = 0.0
        return out


def init_params(config: PolicyConfig, seed) -> PolicyParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, log_Z = 0."""
    rng = np.random.default_rng(seed)
    params = PolicyParams(config, np.zeros(_slices(config.layout())[1]))
    fan_in = {}
    for name, shape in config.layout():
        if name.endswith(".w"):
            fan_in[name[:-2]] = shape[0]
    for name, shape in config.layout():
        if name == "log_Z":
            continue
        bound = 1.0 / math.sqrt(fan_in[name[:-2]])
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


@dataclass
class EdgePolicy:
    """Per-edge view of a policy on a DAG.

    Arrays are plain numpy arrays or tape :class:`Var` s. ``log_pb`` is 0 on
    edges into the sink. ``log_flow_head`` is indexed by state index and
    holds the raw flow-net output (the FL-DB reward offset is applied by the
    losses, which control every reward read).
    """

    log_pf: object
    log_pb: object
    log_Z: object = None
    log_flow_head: object = None
    parametrization: Parametrization = Parametrization.TB

    @classmethod
    def from_forward_probs(cls, dag: PointedDag, probs, log_Z=None, log_pb=None) -> "EdgePolicy":
        """Tabular policy from per-edge forward probabilities."""
        p = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            lpf = np.log(p)
        return cls(lpf, uniform_log_pb(dag) if log_pb is None else np.asarray(log_pb), log_Z)

    def numeric(self) -> "EdgePolicy":
        unwrap = lambda v: v.value if isinstance(v, Var) else v
        return replace(
            self,
            log_pf=np.asarray(unwrap(self.log_pf)),
            log_pb=np.asarray(unwrap(self.log_pb)),
            log_Z=None if self.log_Z is None else float(unwrap(self.log_Z)),
            log_flow_head=None if self.log_flow_head is None else np.asarray(unwrap(self.log_flow_head)),
        )

    def pf(self) -> np.ndarray:
        return np.exp(self.numeric().log_pf)


def uniform_log_pb(dag: PointedDag) -> np.ndarray:
    out = np.zeros(dag.n_edges)
    for e, (p, c) in enumerate(dag.edges):
        if c != dag.sink:
            out[e] = -math.log(len(dag.parents(c)))
    return out


def uniform_forward(dag: PointedDag) -> EdgePolicy:
    probs = np.array([1.0 / len(dag.children(p)) for p, _ in dag.edges])
    return EdgePolicy.from_forward_probs(dag, probs)


_GRID_CACHE = {}


def _grid_tables(dag: GridDag, encoding):
    key = (id(dag), encoding)
    hit = _GRID_CACHE.get(key)
    if hit is None or hit[0] is not dag:
        # forward table flat index per edge, backward table flat index per edge
        fwd = dag.edge_src * N_ACTIONS + dag.edge_action
        bwd_rows = np.where(dag.edge_back_slot >= 0, dag.edge_dst, 0)
        bwd = bwd_rows * 2 + np.maximum(dag.edge_back_slot, 0)
        into_state = dag.edge_back_slot >= 0
        hit = (dag, encode_grid(dag.spec, encoding), fwd, bwd, into_state, uniform_log_pb(dag))
        _GRID_CACHE.clear()
        _GRID_CACHE[key] = hit
    return hit[1:]


def network_outputs(params: PolicyParams, x, theta=None):
    """Run the trunk and heads on encoded rows ``x``.

    ``theta`` may be a tape variable holding ``params.theta``; otherwise
    plain numpy is used.
    """
    cfg = params.config
    th = params.theta if theta is None else theta

    def get(name):
        sl, shape = params._slices[name]
        v = th[sl]
        return v.reshape(shape) if shape else v.reshape(())

    h = x
    for i in range(cfg.layers):
        z = h @ get(f"trunk.{i}.w") + get(f"trunk.{i}.b")
        h = z.tanh() if isinstance(z, Var) else np.tanh(z)
    out = {"pf": h @ get("pf.w") + get("pf.b")}
    if cfg.learn_backward:
        out["pb"] = h @ get("pb.w") + get("pb.b")
    if cfg.parametrization is Parametrization.TB:
        out["log_Z"] = get("log_Z")
    else:
        f = h @ get("flow.w") + get("flow.b")
        out["flow"] = f.reshape(-1) if isinstance(f, Var) else f.reshape(-1)
    return out


def edge_policy(params: PolicyParams, dag: GridDag, theta=None) -> EdgePolicy:
    """Evaluate the network on every grid state and scatter onto edges."""
    if params.config.side != dag.spec.side:
        raise ValueError("policy and grid sides differ")
    x, fwd, bwd, into_state, uniform_pb = _grid_tables(dag, params.config.encoding)
    out = network_outputs(params, x, theta)
    lpf_table = masked_log_softmax(out["pf"], dag.action_mask)
    log_pf = lpf_table.reshape(-1)[fwd]
    if params.config.learn_backward:
        lpb_table = masked_log_softmax(out["pb"], dag.parent_mask).reshape(-1)
        log_pb = lpb_table[bwd] * into_state.astype(np.float64)
    else:
        log_pb = uniform_pb
    return EdgePolicy(
        log_pf=log_pf,
        log_pb=log_pb,
        log_Z=out.get("log_Z"),
        log_flow_head=out.get("flow"),
        parametrization=params.config.parametrization,
    )


def _row(dag: GridDag, s):
    if s == dag.sink:
        raise ValueError("the sink has no policy")
    return dag.spec.index(s)


def forward_policy(params: PolicyParams, s, dag: Optional[GridDag] = None) -> np.ndarray:
    """P_F over ``children(s)``, in child order."""
    from gflowlab.hypergrid import build_grid

    dag = dag or build_grid(GridSpec(params.config.side, ()))
    x = encode_state(dag.spec, s, params.config.encoding)[None, :]
    logits = network_outputs(params, x)["pf"]
    mask = dag.action_mask[_row(dag, s)][None, :]
    lp = masked_log_softmax(logits, mask)[0]
    return np.exp(lp[dag.edge_action[list(dag.out_edges(s))]])


def backward_policy(params: PolicyParams, s, dag: Optional[GridDag] = None) -> np.ndarray:
    """P_B over ``parents(s)``, in parent order; uniform without a backward head."""
    from gflowlab.hypergrid import build_grid

    dag = dag or build_grid(GridSpec(params.config.side, ()))
    if s == dag.source:
        raise ValueError("the source has no parents")
    n_par = len(dag.parents(s))
    if not params.config.learn_backward:
        return np.full(n_par, 1.0 / n_par)
    x = encode_state(dag.spec, s, params.config.encoding)[None, :]
    logits = network_outputs(params, x)["pb"]
    mask = dag.parent_mask[_row(dag, s)][None, :]
    lp = masked_log_softmax(logits, mask)[0]
    return np.exp(lp[mask[0]])


def log_state_flow(params: PolicyParams, s, reward_fn=None) -> float:
    """log F(s): the flow head for DB, ``log R(s)`` plus the flow head for FL-DB."""
    kind = params.config.parametrization
    if kind is Parametrization.TB:
        raise ValueError("TB parametrization has no state-flow head")
    spec = GridSpec(params.config.side, ())
    x = encode_state(spec, s, params.config.encoding)[None, :]
    head = float(network_outputs(params, x)["flow"][0])
    if kind is Parametrization.FLDB:
        if reward_fn is None:
            raise ValueError("FL-DB needs a reward function")
        return math.log(reward_fn(s)) + head
    return head


def loss_and_grad(params: PolicyParams, build_loss):
    """Record ``build_loss(edge_policy_on_tape)`` and return (value, gradient)."""
    tape = Tape()
    theta = tape.variable(params.theta)
    loss = build_loss(theta)
    node = loss.node if hasattr(loss, "node") else loss
    g = tape.backward(node)[theta]
    return float(node.value), g
