"""Experiment drivers behind the command line: sweeps, length runs, evaluation."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gflowlab.checkpoint import load_checkpoint, save_checkpoint
from gflowlab.config import ExperimentConfig, _format_modes, _modes
from gflowlab.exact import TerminalDistribution, exact_terminal_distribution, jsd, normalized_reward, write_csv_matrix, write_pgm
from gflowlab.hypergrid import GridSpec, HidingMask, RewardTable, build_grid, mode_cells
from gflowlab.policy import Parametrization, edge_policy
from gflowlab.trainer import TrainingTrace, train_seed

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("loss", "masked", "seed", "iteration", "jsd", "train_loss")
SUMMARY_COLUMNS = ("loss", "masked", "iteration", "mean_jsd", "std_jsd", "mean_train_loss", "n_seeds")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def _write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def _run_cell(args):
    tcfg, seed = args
    return train_seed(tcfg, seed)


def run_cells(cells, jobs: int = 1) -> list[TrainingTrace]:
    """Train every (TrainConfig, seed) cell; results come back in input order."""
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]


@dataclass
class Curve:
    loss: str
    masked: bool
    traces: list = field(default_factory=list)

    def iterations(self) -> np.ndarray:
        return self.traces[0].iterations

    def complete(self) -> bool:
        return all(t.error is None for t in self.traces)

    def mean(self):
        """Seed-mean JSD and train loss at the shared eval iterations."""
        n = min(len(t.points) for t in self.traces)
        it = self.traces[0].iterations[:n]
        j = np.array([[p.jsd for p in t.points[:n]] for t in self.traces])
        l = np.array([[p.train_loss for p in t.points[:n]] for t in self.traces])
        # iteration 0 precedes any update, so its train loss is NaN for every seed
        seen = (~np.isnan(l)).sum(axis=0)
        ml = np.where(seen > 0, np.nansum(l, axis=0) / np.maximum(seen, 1), np.nan)
        return it, j.mean(axis=0), j.std(axis=0), ml

    @property
    def final_mean_jsd(self) -> float:
        return float(np.mean([t.final_jsd for t in self.traces]))


@dataclass
class SweepResult:
    curves: list
    mask: HidingMask

    def curve(self, loss, masked) -> Curve:
        loss = Parametrization(loss).value
        for c in self.curves:
            if c.loss == loss and c.masked == masked:
                return c
        raise KeyError((loss, masked))

    def finals(self) -> dict:
        return {(c.loss, c.masked): c.final_mean_jsd for c in self.curves}

    def failed(self) -> list:
        return [(c.loss, c.masked, t.seed, t.error) for c in self.curves for t in c.traces if t.error]

    def ordering_report(self) -> list[tuple[str, bool, str]]:
        """(claim, holds, detail) rows for the orderings a sweep is judged on."""
        f = self.finals()
        out = []
        losses = sorted({c.loss for c in self.curves})
        for k in losses:
            if (k, False) in f and (k, True) in f:
                u, m = f[(k, False)], f[(k, True)]
                out.append((f"unmasked<=masked {k}", u <= m, f"{u:.6g} vs {m:.6g}"))
        if ("FL-DB", True) in f and ("TB", True) in f:
            a, b = f[("FL-DB", True)], f[("TB", True)]
            out.append(("FL-DB(masked)<TB(masked)", a < b, f"{a:.6g} vs {b:.6g}"))
        if ("DB", True) in f and ("TB", True) in f:
            a, b = f[("DB", True)], f[("TB", True)]
            out.append(("DB(masked)<=1.1*TB(masked)", a <= 1.1 * b, f"{a:.6g} vs {1.1 * b:.6g}"))
            out.append(("DB(masked)<=TB(masked) [reported]", a <= b, f"{a:.6g} vs {b:.6g}"))
        return out


def sweep(cfg: ExperimentConfig, jobs: int = 1) -> SweepResult:
    mask = cfg.random_mask()
    variants = [True, False] if cfg.compare_masked else [bool(mask.hidden)]
    cells, keys = [], []
    for loss in cfg.losses:
        for masked in variants:
            tcfg = cfg.train_config(Parametrization(loss), mask if masked else HidingMask())
            for s in cfg.seeds:
                cells.append((tcfg, s))
                keys.append((Parametrization(loss).value, masked))
    traces = run_cells(cells, jobs)
    curves = {}
    for key, tr in zip(keys, traces):
        curves.setdefault(key, Curve(*key)).traces.append(tr)
    return SweepResult(list(curves.values()), mask)


def curve_rows(result: SweepResult):
    for c in result.curves:
        for t in c.traces:
            for p in t.points:
                yield (c.loss, c.masked, t.seed, p.iteration, p.jsd, p.train_loss)


def summary_rows(result: SweepResult):
    for c in result.curves:
        it, mj, sj, ml = c.mean()
        for i in range(len(it)):
            yield (c.loss, c.masked, int(it[i]), mj[i], sj[i], ml[i], len(c.traces))


def checkpoint_meta(cfg: ExperimentConfig, seed, masked: bool) -> dict:
    return {"modes": _format_modes(cfg.modes), "seed": seed, "masked": int(masked)}


def write_sweep(result: SweepResult, cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "curves": _write_rows(out / "curves.csv", CURVE_COLUMNS, curve_rows(result)),
        "summary": _write_rows(out / "summary.csv", SUMMARY_COLUMNS, summary_rows(result)),
    }
    (out / "config.txt").write_text(cfg.to_text())
    hidden = sorted(result.mask.hidden)
    _write_rows(out / "hidden_states.csv", ("a", "b"), hidden)
    ck = out / "checkpoints"
    ck.mkdir(exist_ok=True)
    for c in result.curves:
        tag = "masked" if c.masked else "unmasked"
        for t in c.traces:
            save_checkpoint(t.params, ck / f"{c.loss}_{tag}_seed{t.seed}.ckpt", checkpoint_meta(cfg, t.seed, c.masked))
    paths["checkpoints"] = ck
    return paths


# length generalization ---------------------------------------------------


@dataclass
class LengthResult:
    spec: GridSpec
    mask: HidingMask
    traces: list
    learned: TerminalDistribution
    target: TerminalDistribution

    def hidden_mass(self) -> tuple[float, float]:
        """(learned, ideal) probability mass on hidden states."""
        hid = list(self.mask.hidden)
        return float(sum(self.learned[x] for x in hid)), float(sum(self.target[x] for x in hid))

    def hidden_mode_cells(self) -> list:
        return sorted(x for x in mode_cells(self.spec) if x in self.mask.hidden)

    def recovery(self, dist: TerminalDistribution | None = None, ratio: float = 0.5) -> float:
        """Fraction of hidden mode cells holding at least ``ratio`` of their ideal mass."""
        dist = self.learned if dist is None else dist
        cells = self.hidden_mode_cells()
        if not cells:
            return float("nan")
        return float(np.mean([dist[x] >= ratio * self.target[x] for x in cells]))

    def per_seed_recovery(self, ratio: float = 0.5) -> list[float]:
        dag = build_grid(self.spec)
        return [self.recovery(exact_terminal_distribution(edge_policy(t.params, dag), dag), ratio) for t in self.traces]


def length_run(cfg: ExperimentConfig, jobs: int = 1) -> LengthResult:
    spec = cfg.grid()
    mask = cfg.length_mask()
    tcfg = cfg.train_config(Parametrization(cfg.loss), mask)
    traces = run_cells([(tcfg, s) for s in cfg.seeds], jobs)
    dag = build_grid(spec)
    dists = [exact_terminal_distribution(edge_policy(t.params, dag), dag) for t in traces]
    probs = np.mean([d.probs for d in dists], axis=0)
    learned = TerminalDistribution(dists[0].states, probs)
    return LengthResult(spec, mask, traces, learned, normalized_reward(RewardTable.from_spec(spec)))


def write_length(result: LengthResult, cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    spec = result.spec
    dag = build_grid(spec)
    paths = {
        "learned_csv": write_csv_matrix(result.learned, spec, out / "learned.csv"),
        "learned_pgm": write_pgm(result.learned, spec, out / "learned.pgm"),
        "reward_csv": write_csv_matrix(result.target, spec, out / "reward.csv"),
        "reward_pgm": write_pgm(result.target, spec, out / "reward.pgm"),
    }
    mask_grid = result.mask.as_array(spec).astype(np.float64).reshape(spec.side, spec.side)
    paths["mask_pgm"] = write_pgm(mask_grid, spec, out / "hidden.pgm")
    for t in result.traces:
        d = exact_terminal_distribution(edge_policy(t.params, dag), dag)
        write_csv_matrix(d, spec, out / f"learned_seed{t.seed}.csv")
        save_checkpoint(t.params, out / f"{t.loss.value}_length_seed{t.seed}.ckpt", checkpoint_meta(cfg, t.seed, True))
    rows = [(t.seed, t.final_jsd, r) for t, r in zip(result.traces, result.per_seed_recovery())]
    paths["report"] = _write_rows(out / "length_report.csv", ("seed", "final_jsd", "mode_recovery"), rows)
    _write_rows(out / "curves.csv", CURVE_COLUMNS, ((t.loss.value, True, t.seed, p.iteration, p.jsd, p.train_loss) for t in result.traces for p in t.points))
    (out / "config.txt").write_text(cfg.to_text())
    return paths


# checkpoint evaluation ---------------------------------------------------


def evaluate_checkpoint(path, out: Path | None = None) -> dict:
    params, meta = load_checkpoint(path)
    spec = GridSpec(params.config.side, _modes(meta.get("modes", "default")) if meta.get("modes", "default") != "default" else None)
    dag = build_grid(spec)
    dist = exact_terminal_distribution(edge_policy(params, dag), dag)
    target = normalized_reward(RewardTable.from_spec(spec))
    res = {"jsd": jsd(dist, target), "spec": spec, "dist": dist}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        stem = Path(path).stem
        res["csv"] = write_csv_matrix(dist, spec, out / f"{stem}.csv")
        res["pgm"] = write_pgm(dist, spec, out / f"{stem}.pgm")
    return res
