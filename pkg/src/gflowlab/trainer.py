"""On-policy training of hypergrid GFlowNets with optional reward hiding."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from gflowlab.autodiff import Tape
from gflowlab.dag import PointedDag, Trajectory
from gflowlab.exact import exact_terminal_distribution, jsd, normalized_reward
from gflowlab.hypergrid import GridSpec, HidingMask, RewardAccess, RewardTable, build_grid
from gflowlab.objectives import HiddenFlow, batch_db_losses, hidden_array, tb_losses, trajectory_rejected
from gflowlab.policy import EdgePolicy, Parametrization, PolicyConfig, PolicyParams, edge_policy, init_params

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    def __init__(self, iteration, what="gradient"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    grid: GridSpec
    loss: Parametrization = Parametrization.TB
    mask: HidingMask = HidingMask()
    lr: float = 1e-3
    lr_log_z: float = 1e-1
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    iterations: int = 1000
    batch_size: int = 1
    seeds: tuple = (0,)
    eval_every: int = 50
    eps_unif: float = 0.0
    hidden: int = 64
    layers: int = 2
    encoding: str = "onehot"
    learn_backward: bool = False
    record_trajectories: bool = False
    hidden_flow: HiddenFlow = HiddenFlow.OMIT

    def __post_init__(self):
        object.__setattr__(self, "loss", Parametrization(self.loss))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        object.__setattr__(self, "betas", tuple(self.betas))
        object.__setattr__(self, "hidden_flow", HiddenFlow(self.hidden_flow))
        if not self.lr > 0 or not self.lr_log_z > 0:
            raise ValueError("learning rates must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("batch size and eval cadence must be >= 1")
        if not 0.0 <= self.eps_unif <= 1.0:
            raise ValueError("eps_unif must lie in [0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(
            side=self.grid.side,
            hidden=self.hidden,
            layers=self.layers,
            encoding=self.encoding,
            parametrization=self.loss,
            learn_backward=self.learn_backward,
        )


@dataclass(frozen=True)
class TracePoint:
    iteration: int
    seed: int
    train_loss: float
    jsd: float
    wall_time: float


@dataclass
class TrainingTrace:
    seed: int
    loss: Parametrization
    masked: bool
    points: list = field(default_factory=list)
    params: Optional[PolicyParams] = None
    error: Optional[str] = None
    skipped: int = 0
    updates: int = 0
    reward_reads: set = field(default_factory=set)
    trajectories: list = field(default_factory=list)

    @property
    def final_jsd(self) -> float:
        return self.points[-1].jsd

    @property
    def iterations(self) -> np.ndarray:
        return np.array([p.iteration for p in self.points])

    @property
    def jsd_curve(self) -> np.ndarray:
        return np.array([p.jsd for p in self.points])


# sampling ---------------------------------------------------------------


def _out_table(dag: PointedDag):
    cached = getattr(dag, "_out_table", None)
    if cached is None:
        width = dag.max_out_degree()
        table = np.full((dag.n_states, width), -1, dtype=np.intp)
        for s in dag.states:
            if s != dag.sink:
                out = dag.out_edges(s)
                table[dag.index[s], : len(out)] = out
        cached = dag._out_table = table
    return cached


def sample_trajectories(policy: EdgePolicy, dag: PointedDag, rng: np.random.Generator, count: int, eps_unif: float = 0.0):
    """Roll out ``count`` trajectories in lockstep; returns (trajectories, edge lists)."""
    pf = np.exp(np.asarray(policy.numeric().log_pf, dtype=np.float64))
    table = _out_table(dag)
    valid = table >= 0
    sink = dag.index[dag.sink]
    cur = np.full(count, dag.index[dag.source], dtype=np.intp)
    paths = [[] for _ in range(count)]
    active = np.arange(count)
    while active.size:
        rows = table[cur[active]]
        ok = valid[cur[active]]
        probs = np.where(ok, pf[np.maximum(rows, 0)], 0.0)
        if eps_unif > 0:
            probs = (1.0 - eps_unif) * probs + eps_unif * ok / ok.sum(axis=1, keepdims=True)
        cum = np.cumsum(probs, axis=1)
        u = rng.random(active.size) * cum[:, -1]
        k = (cum <= u[:, None]).sum(axis=1)
        # guard against u landing on the upper rounding edge
        k = np.minimum(k, ok.sum(axis=1) - 1)
        chosen = rows[np.arange(active.size), k]
        for w, e in zip(active, chosen):
            paths[w].append(e)
        cur[active] = dag.edge_dst[chosen]
        active = active[cur[active] != sink]
    states = dag.states
    trajs = [Trajectory((dag.source,) + tuple(states[dag.edge_dst[e]] for e in p)) for p in paths]
    return trajs, [np.array(p, dtype=np.intp) for p in paths]


def sample_trajectory(policy, dag: PointedDag, rng: np.random.Generator, eps_unif: float = 0.0) -> Trajectory:
    if isinstance(policy, PolicyParams):
        policy = edge_policy(policy, dag)
    return sample_trajectories(policy, dag, rng, 1, eps_unif)[0][0]


# optimizers ---------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str = "sgd"
    lr: object = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None


def sgd_step(theta: np.ndarray, grad: np.ndarray, state: OptimizerState, lr=None) -> np.ndarray:
    """One update; ``state`` is advanced in place. Raises on a non-finite gradient."""
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError(state.step + 1)
    lr = state.lr if lr is None else lr
    state.step += 1
    if state.kind == "sgd":
        return theta - lr * grad
    if state.m is None:
        state.m = np.zeros_like(theta)
        state.v = np.zeros_like(theta)
    b1, b2 = state.betas
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1**state.step)
    v_hat = state.v / (1 - b2**state.step)
    return theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def _lr_vector(params: PolicyParams, cfg: TrainConfig) -> np.ndarray:
    lr = np.full(params.size, cfg.lr)
    if "log_Z" in params.names:
        lr[params.slice_of("log_Z")] = cfg.lr_log_z
    return lr


# training -----------------------------------------------------------------


def step_loss(theta_var, params: PolicyParams, dag, trajs, reward: RewardAccess, mask: HidingMask, hidden: np.ndarray, kind, hidden_flow=HiddenFlow.OMIT):
    """Batch loss node for one update, or None if the mask leaves nothing to learn from."""
    pol = edge_policy(params, dag, theta_var)
    if kind is Parametrization.TB:
        kept = [t for t in trajs if not trajectory_rejected(t, mask)]
        if not kept:
            return None
        return tb_losses(kept, pol, dag, reward).node.sum() * (1.0 / len(kept))
    per_traj, _ = batch_db_losses(trajs, pol, dag, reward, hidden, hidden_flow)
    if per_traj is None:
        return None
    return per_traj.sum() * (1.0 / len(trajs))


def train_seed(cfg: TrainConfig, seed: int, reward_table: RewardTable | None = None) -> TrainingTrace:
    spec = cfg.grid
    dag = build_grid(spec)
    table = reward_table or RewardTable.from_spec(spec)
    target = normalized_reward(table)
    access = RewardAccess(table)
    mask = cfg.mask
    hidden = hidden_array(mask, dag)
    kind = cfg.loss

    params = init_params(cfg.policy_config(), [seed, 0])
    rng = np.random.default_rng([seed, 1])
    opt = OptimizerState(cfg.optimizer, _lr_vector(params, cfg), cfg.betas, cfg.adam_eps)
    trace = TrainingTrace(seed=seed, loss=kind, masked=bool(mask.hidden))
    t0 = time.perf_counter()
    loss_sum, loss_n = 0.0, 0

    def record(i, pol=None):
        pol = pol if pol is not None else edge_policy(params, dag)
        d = jsd(exact_terminal_distribution(pol, dag), target)
        mean = loss_sum / loss_n if loss_n else float("nan")
        trace.points.append(TracePoint(i, seed, mean, d, time.perf_counter() - t0))

    record(0)
    try:
        for i in range(1, cfg.iterations + 1):
            tape = Tape()
            theta = tape.variable(params.theta)
            pol = edge_policy(params, dag, theta)
            trajs, _ = sample_trajectories(pol, dag, rng, cfg.batch_size, cfg.eps_unif)
            node = step_loss(theta, params, dag, trajs, access, mask, hidden, kind, cfg.hidden_flow)
            if node is None:
                trace.skipped += 1
            else:
                value = float(node.value)
                if not math.isfinite(value):
                    raise NonFiniteError(i, "loss")
                g = tape.backward(node)[theta]
                try:
                    params = params.with_theta(sgd_step(params.theta, g, opt))
                except NonFiniteError:
                    raise NonFiniteError(i) from None
                loss_sum += value
                loss_n += 1
                trace.updates += 1
                if cfg.record_trajectories:
                    trace.trajectories.extend(t for t in trajs if kind is not Parametrization.TB or not trajectory_rejected(t, mask))
            if i % cfg.eval_every == 0 or i == cfg.iterations:
                record(i)
    except NonFiniteError as exc:
        log.warning("seed %s aborted: %s", seed, exc)
        trace.error = str(exc)
    trace.params = params
    trace.reward_reads = access.states_read()
    return trace


def _train_one(args):
    cfg, seed, table = args
    return train_seed(cfg, seed, table)


def train(cfg: TrainConfig, reward_table: RewardTable | None = None, jobs: int = 1) -> list[TrainingTrace]:
    """One trace per seed, in seed order."""
    work = [(cfg, s, reward_table) for s in cfg.seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_train_one, work))
    return [_train_one(w) for w in work]


def training_loss_average(trace: TrainingTrace, cfg: TrainConfig, reward_table: RewardTable | None = None) -> float:
    """Mean loss of every trajectory trained on, re-evaluated at the final parameters.

    Needs a run with ``record_trajectories=True``.
    """
    if not trace.trajectories:
        raise ValueError("trace holds no trajectories; train with record_trajectories=True")
    dag = build_grid(cfg.grid)
    table = reward_table or RewardTable.from_spec(cfg.grid)
    pol = edge_policy(trace.params, dag)
    if cfg.loss is Parametrization.TB:
        return float(np.mean(tb_losses(trace.trajectories, pol, dag, table).node))
    per, _ = batch_db_losses(trace.trajectories, pol, dag, table, hidden_array(cfg.mask, dag), cfg.hidden_flow)
    return float(np.mean(per))


def with_loss(cfg: TrainConfig, kind, mask: HidingMask | None = None) -> TrainConfig:
    return replace(cfg, loss=Parametrization(kind), mask=cfg.mask if mask is None else mask)
