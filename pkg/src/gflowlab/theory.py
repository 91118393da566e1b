"""Numerical certificates for the stability and generalization bounds.

Everything here enumerates trajectories exactly; there is no sampling
except in choosing which random instances to test.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gflowlab.dag import DEFAULT_TRAJECTORY_CAP, PointedDag, Trajectory, enumerate_trajectories
from gflowlab.exact import TerminalDistribution, exact_terminal_distribution
from gflowlab.hypergrid import GridSpec, RewardTable, build_grid
from gflowlab.policy import EdgePolicy, PolicyConfig, PolicyParams, edge_policy, init_params, uniform_log_pb

PASS_TOL = 1e-12
THEOREM_TOL = 1e-9


@dataclass
class BoundReport:
    check: str
    lhs: float
    rhs: float
    witness: str = ""
    tol: float = PASS_TOL
    extra: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return bool(self.slack >= -self.tol)


def reward_vector(dag: PointedDag, reward) -> np.ndarray:
    """Rewards by DAG state index (NaN off the terminal set)."""
    out = np.full(dag.n_states, np.nan)
    if isinstance(reward, RewardTable):
        out[: reward.spec.n_states] = reward.values
    elif isinstance(reward, dict):
        for x, r in reward.items():
            out[dag.index[x]] = r
    else:
        r = np.asarray(reward, dtype=np.float64)
        out[: r.size] = r
    term = np.array([dag.index[x] for x in dag.terminal_set], dtype=np.intp)
    if np.any(~(out[term] > 0)) or not np.all(np.isfinite(out[term])):
        raise ValueError("every terminal state needs a finite positive reward")
    return out


class Enumerated:
    """Trajectories of a DAG with their edge incidence, computed once."""

    def __init__(self, dag: PointedDag, cap: int = DEFAULT_TRAJECTORY_CAP):
        self.dag = dag
        self.trajectories = enumerate_trajectories(dag, cap)
        self.edges = [dag.trajectory_edges(t) for t in self.trajectories]
        self.incidence = np.zeros((len(self.trajectories), dag.n_edges))
        for i, e in enumerate(self.edges):
            self.incidence[i, e] = 1.0
        self.terminal_idx = np.array([dag.index[t.terminal] for t in self.trajectories], dtype=np.intp)
        self.log_pb_uniform = self.incidence @ uniform_log_pb(dag)

    def __len__(self):
        return len(self.trajectories)


def _enumerated(dag, cap=DEFAULT_TRAJECTORY_CAP) -> Enumerated:
    cached = getattr(dag, "_enumerated", None)
    if cached is None:
        cached = dag._enumerated = Enumerated(dag, cap)
    return cached


@dataclass
class ExactMinimizer:
    dag: PointedDag
    trajectories: list
    probs: np.ndarray
    forward_probs: np.ndarray
    Z: float

    def edge_policy(self) -> EdgePolicy:
        with np.errstate(divide="ignore"):
            lpf = np.log(self.forward_probs)
        return EdgePolicy(lpf, uniform_log_pb(self.dag), math.log(self.Z))

    def terminal_distribution(self) -> TerminalDistribution:
        return exact_terminal_distribution(self.edge_policy(), self.dag)


def exact_minimizer(dag: PointedDag, reward, cap: int = DEFAULT_TRAJECTORY_CAP) -> ExactMinimizer:
    """TB global minimum with a uniform backward policy.

    Trajectory probabilities are ``R(x) * prod 1/|Par(s_i)| / Z``; forward
    probabilities follow by conditioning the aggregated edge flows on the
    state flows.
    """
    en = _enumerated(dag, cap)
    r = reward_vector(dag, reward)
    term = sorted(dag.terminal_set, key=dag.index.__getitem__)
    z = math.fsum(r[dag.index[x]] for x in term)
    probs = r[en.terminal_idx] * np.exp(en.log_pb_uniform) / z
    edge_flow = probs @ en.incidence
    state_flow = np.zeros(dag.n_states)
    np.add.at(state_flow, dag.edge_src, edge_flow)
    pf = edge_flow / state_flow[dag.edge_src]
    return ExactMinimizer(dag, en.trajectories, probs, pf, z)


def backward_product_constant(dag: PointedDag) -> float:
    """C = max over trajectories of prod_{i=1..n} 1/|Par(s_i)| (sink factor 1)."""
    return float(np.exp(_enumerated(dag).log_pb_uniform.max()))


def perturb_rewards(dag: PointedDag, reward, eps: float, rng: np.random.Generator, pairs: int = 1, max_tries: int = 1000) -> np.ndarray:
    """Sum-preserving perturbation: disjoint pairs (x, y) shifted by (+d, -d), 0 < d < eps."""
    r1 = reward_vector(dag, reward)
    term = np.array(sorted(dag.index[x] for x in dag.terminal_set), dtype=np.intp)
    if term.size < 2:
        return r1.copy()
    pairs = min(pairs, term.size // 2)
    for _ in range(max_tries):
        r2 = r1.copy()
        chosen = rng.choice(term, size=2 * pairs, replace=False)
        deltas = rng.uniform(0.0, eps, size=pairs)
        for k in range(pairs):
            r2[chosen[2 * k]] += deltas[k]
            r2[chosen[2 * k + 1]] -= deltas[k]
        if np.all(r2[term] > 0):
            return r2
    raise RuntimeError("could not draw a perturbation keeping every reward positive")


def stability_check(dag: PointedDag, reward, eps: float, n_perturbations: int, rng, pairs: int = 1) -> list[BoundReport]:
    """Per-trajectory stability bound for sum-preserving reward perturbations.

    For each perturbation the report holds ``lhs = max_tau |P1 - P2|`` and
    ``rhs = (C / Z) * max_x |R1(x) - R2(x)|``; ``extra`` carries the bound
    in terms of ``eps`` and the tightness ratio ``lhs / rhs``.
    """
    rng = np.random.default_rng(rng)
    r1 = reward_vector(dag, reward)
    m1 = exact_minimizer(dag, r1)
    c = backward_product_constant(dag)
    term = np.array(sorted(dag.index[x] for x in dag.terminal_set), dtype=np.intp)
    reports = []
    for k in range(max(n_perturbations, 0)):
        r2 = perturb_rewards(dag, r1, eps, rng, pairs)
        m2 = exact_minimizer(dag, r2)
        diff = np.abs(m1.probs - m2.probs)
        worst = int(np.argmax(diff))
        d_r = float(np.max(np.abs(r1[term] - r2[term])))
        bound = c / m1.Z * d_r
        reports.append(
            BoundReport(
                check=f"stability[{k}]",
                lhs=float(diff[worst]),
                rhs=bound,
                witness=_fmt_traj(m1.trajectories[worst]),
                extra={
                    "C": c,
                    "Z": m1.Z,
                    "C_over_Z": c / m1.Z,
                    "eps_bound": c / m1.Z * eps,
                    "tightness": float(diff[worst] / bound) if bound > 0 else 0.0,
                    "sum_shift": abs(math.fsum(r1[term]) - math.fsum(r2[term])),
                },
            )
        )
    return reports


def tv_lemma_check(h, p, q, tv_scale: float = 1.0, name: str = "tv_lemma") -> BoundReport:
    """``|E_Q[h] - E_P[h]| <= (M1 + M2) TV(P, Q)`` with ``-M1 <= h <= M2``.

    ``tv_scale`` exists only to inject a deliberate error for negative
    controls; it multiplies the total variation.
    """
    h = np.asarray(h, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise ValueError("h must be bounded (finite everywhere)")
    m1 = max(0.0, -float(h.min()))
    m2 = max(0.0, float(h.max()))
    tv = 0.5 * float(np.abs(p - q).sum()) * tv_scale
    lhs = abs(float(q @ h) - float(p @ h))
    worst = int(np.argmax(np.abs((q - p) * h)))
    return BoundReport(name, lhs, (m1 + m2) * tv, witness=f"trajectory #{worst}", tol=THEOREM_TOL, extra={"M1": m1, "M2": m2, "tv": tv})


def _policy_on(dag, policy) -> EdgePolicy:
    if isinstance(policy, PolicyParams):
        return edge_policy(policy, dag).numeric()
    return policy.numeric()


def beyond_iid_check(dag: PointedDag, reward, policy, tv_scale: float = 1.0) -> list[BoundReport]:
    """The chain from the Jensen step to the final off-policy bound.

    The TB loss uses the true log Z and the policy's own backward
    probabilities; ``P*`` is the trajectory distribution ``R(x) prod P_B / Z``
    (the exact minimizer when P_B is uniform). Returns four reports: Jensen,
    Pinsker, the TV lemma step, and the full inequality.
    """
    en = _enumerated(dag)
    pol = _policy_on(dag, policy)
    r = reward_vector(dag, reward)
    z = math.fsum(r[dag.index[x]] for x in dag.terminal_set)
    log_q = en.incidence @ np.asarray(pol.log_pf)
    log_pstar = np.log(r[en.terminal_idx]) - math.log(z) + en.incidence @ np.asarray(pol.log_pb)
    q, pstar = np.exp(log_q), np.exp(log_pstar)
    loss = (log_q - log_pstar) ** 2

    e_q = float(q @ loss)
    e_p = float(pstar @ loss)
    kl_q = float(q @ (log_q - log_pstar))
    tv = 0.5 * float(np.abs(q - pstar).sum()) * tv_scale
    m1, m2 = 0.0, float(loss.max())
    worst = _fmt_traj(en.trajectories[int(np.argmax(loss))])
    common = {"E_Q_loss": e_q, "E_Pstar_loss": e_p, "KL": kl_q, "TV": tv, "M2": m2}
    return [
        BoundReport("jensen", kl_q, math.sqrt(e_q), worst, THEOREM_TOL, common),
        BoundReport("pinsker", tv, math.sqrt(max(kl_q, 0.0) / 2.0), worst, THEOREM_TOL, common),
        BoundReport("lemma_step", e_p, (m1 + m2) * tv + e_q, worst, THEOREM_TOL, common),
        BoundReport("beyond_iid", e_p, (m1 + m2) * e_q**0.25 / math.sqrt(2.0) + e_q, worst, THEOREM_TOL, common),
    ]


def _fmt_traj(t: Trajectory) -> str:
    return "->".join("".join(str(v) for v in s) if isinstance(s, tuple) else str(s) for s in t.states)


# randomized suites ----------------------------------------------------------


def random_tabular_policy(dag: PointedDag, rng, scale: float = 1.0, learn_backward: bool = False) -> EdgePolicy:
    """Softmax of Gaussian logits at every state (optionally for P_B as well)."""
    logits = rng.normal(0.0, scale, size=dag.n_edges)
    lpf = np.empty(dag.n_edges)
    for s in dag.states:
        if s == dag.sink:
            continue
        e = np.array(dag.out_edges(s))
        x = logits[e]
        lpf[e] = x - np.logaddexp.reduce(x)
    lpb = uniform_log_pb(dag)
    if learn_backward:
        blog = rng.normal(0.0, scale, size=dag.n_edges)
        for s in dag.states:
            if s in (dag.source, dag.sink):
                continue
            e = np.array([dag.edge_index[(p, s)] for p in dag.parents(s)])
            lpb[e] = blog[e] - np.logaddexp.reduce(blog[e])
    return EdgePolicy(lpf, lpb, 0.0)


def random_rewards(dag: PointedDag, rng) -> np.ndarray:
    r = np.full(dag.n_states, np.nan)
    for x in dag.terminal_set:
        r[dag.index[x]] = float(np.exp(rng.normal(0.0, 1.5)))
    return r


def random_beyond_iid_instance(rng):
    side = int(rng.integers(2, 5))
    dag = build_grid(GridSpec(side, ()))
    reward = random_rewards(dag, rng)
    kind = rng.integers(0, 4)
    if kind == 0:
        cfg = PolicyConfig(side=side, hidden=8, parametrization="TB")
        policy = init_params(cfg, int(rng.integers(2**31)))
        policy.theta *= rng.uniform(0.5, 4.0)
    elif kind == 1:
        # tiny perturbation of the exact minimizer, where every side is near 0
        m = exact_minimizer(dag, reward).edge_policy()
        policy = EdgePolicy(m.log_pf + rng.normal(0, 1e-3, size=dag.n_edges), m.log_pb, m.log_Z)
        policy = _renormalize(dag, policy)
    else:
        policy = random_tabular_policy(dag, rng, scale=float(rng.uniform(0.05, 3.0)), learn_backward=bool(kind == 3))
    return dag, reward, policy


def _renormalize(dag, pol: EdgePolicy) -> EdgePolicy:
    lpf = np.array(pol.log_pf, dtype=np.float64)
    for s in dag.states:
        if s != dag.sink:
            e = np.array(dag.out_edges(s))
            lpf[e] -= np.logaddexp.reduce(lpf[e])
    return EdgePolicy(lpf, pol.log_pb, pol.log_Z)


@dataclass
class CertifySummary:
    reports: list
    groups: dict

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def failures(self) -> list:
        return [r for r in self.reports if not r.passed]


def certify(
    side: int = 4,
    perturbations: int = 100,
    lemma_trials: int = 1000,
    iid_trials: int = 1000,
    eps: float = 0.01,
    seed: int = 0,
    dag: Optional[PointedDag] = None,
    reward=None,
    inject_bug: bool = False,
) -> CertifySummary:
    """Run the stability, TV lemma and beyond-i.i.d. suites.

    With ``dag`` given, every suite runs on that DAG instead of grids.
    ``inject_bug`` halves the total variation everywhere, a negative control
    that must make the suite fail.
    """
    rng = np.random.default_rng(seed)
    scale = 0.5 if inject_bug else 1.0
    groups = {}

    if dag is None:
        base = build_grid(GridSpec(side, ()))
        base_reward = RewardTable(GridSpec(side, ()), np.exp(rng.normal(0.0, 1.0, size=side * side)))
    else:
        base, base_reward = dag, (reward if reward is not None else {x: 1.0 for x in dag.terminal_set})

    stab = stability_check(base, base_reward, eps, perturbations, rng)
    if not stab:
        # nothing to perturb (a single terminal): the bound holds with equality
        stab = [BoundReport("stability[trivial]", 0.0, 0.0, "", PASS_TOL)]
    groups["stability"] = stab

    en = _enumerated(base)
    lemma = []
    for k in range(lemma_trials):
        n = len(en)
        p = rng.dirichlet(np.full(n, float(rng.uniform(0.1, 2.0))))
        q = rng.dirichlet(np.full(n, float(rng.uniform(0.1, 2.0))))
        h = rng.uniform(-3.0, 3.0, size=n) * rng.uniform(0.0, 5.0)
        if k % 10 == 0:
            # extremal h = +-M aligned with sign(q - p): the lemma holds with equality
            h = np.where(q >= p, 1.0, -1.0) * rng.uniform(0.1, 5.0)
        lemma.append(tv_lemma_check(h, p, q, scale, name=f"tv_lemma[{k}]"))
    groups["tv_lemma"] = lemma

    iid = {"jensen": [], "pinsker": [], "lemma_step": [], "beyond_iid": []}
    for k in range(iid_trials):
        if dag is None:
            d, r, pol = random_beyond_iid_instance(rng)
        else:
            d, r = base, base_reward
            pol = random_tabular_policy(base, rng, scale=float(rng.uniform(0.05, 3.0)))
        for rep in beyond_iid_check(d, r, pol, scale):
            rep.check = f"{rep.check}[{k}]"
            iid[rep.check.split("[")[0]].append(rep)
    groups.update(iid)
    reports = [r for g in groups.values() for r in g]
    return CertifySummary(reports, groups)


def render_table(summary: CertifySummary) -> str:
    out = io.StringIO()
    out.write(f"{'check':<12} {'n':>6} {'failed':>6} {'min slack':>12} {'max lhs/rhs':>12}  worst witness\n")
    for name, reps in summary.groups.items():
        slacks = np.array([r.slack for r in reps])
        ratios = np.array([r.lhs / r.rhs if r.rhs > 0 else 0.0 for r in reps])
        worst = reps[int(np.argmin(slacks))]
        failed = sum(not r.passed for r in reps)
        out.write(f"{name:<12} {len(reps):>6} {failed:>6} {slacks.min():>12.3e} {ratios.max():>12.4f}  {worst.witness}\n")
    out.write("PASS\n" if summary.passed else "FAIL\n")
    return out.getvalue()


def write_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "lhs", "rhs", "slack", "witness", "pass"])
        for r in reports:
            w.writerow([r.check, f"{r.lhs:.17g}", f"{r.rhs:.17g}", f"{r.slack:.17g}", r.witness, "pass" if r.passed else "fail"])
