"""``gflow-lab`` command line.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 certification failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from gflowlab.config import ConfigError, load_config
from gflowlab.dag import DagError, PointedDag
from gflowlab.experiments import evaluate_checkpoint, length_run, sweep, write_length, write_sweep

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CERTIFY = 0, 1, 2, 3

log = logging.getLogger("gflowlab")


def out_dir(cfg_out: str, flag: str | None, default: str) -> Path:
    return Path(flag or cfg_out or os.environ.get("GFLOW_LAB_OUT") or default)


def read_dag_file(path) -> tuple[PointedDag, dict]:
    """Small DAG description: ``source X``, ``sink Y``, ``edge A B``, ``reward X v``.

    Rewards default to 1 for terminal states not given one.
    """
    source = sink = None
    edges, rewards = [], {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].split()
        if not line:
            continue
        kind, args = line[0], line[1:]
        try:
            if kind == "source" and len(args) == 1:
                source = args[0]
            elif kind == "sink" and len(args) == 1:
                sink = args[0]
            elif kind == "edge" and len(args) == 2:
                edges.append(tuple(args))
            elif kind == "reward" and len(args) == 2:
                rewards[args[0]] = float(args[1])
            else:
                raise ValueError
        except ValueError:
            raise ConfigError(f"{path}:{n}: cannot parse {raw.strip()!r}") from None
    if source is None or sink is None:
        raise ConfigError(f"{path}: needs a 'source' and a 'sink' line")
    try:
        dag = PointedDag.from_edges(edges, source, sink)
    except DagError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(rewards) - set(dag.terminal_set)
    if unknown:
        raise ConfigError(f"{path}: rewards given for non-terminal states {sorted(unknown)}")
    reward = {x: rewards.get(x, 1.0) for x in dag.terminal_set}
    if any(not v > 0 for v in reward.values()):
        raise ConfigError(f"{path}: rewards must be positive")
    return dag, reward


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out = out_dir(cfg.out, args.out, "gflow-lab-sweep")
    t0 = time.perf_counter()
    result = sweep(cfg, jobs=args.jobs)
    paths = write_sweep(result, cfg, out)
    print(f"{'loss':<6} {'masked':<7} {'final mean JSD':>16}")
    for (loss, masked), v in sorted(result.finals().items()):
        print(f"{loss:<6} {str(masked):<7} {v:>16.6g}")
    for claim, ok, detail in result.ordering_report():
        print(f"{'yes' if ok else 'no ':<4} {claim}: {detail}")
    print(f"wrote {paths['curves']} and {paths['summary']} in {time.perf_counter() - t0:.1f}s")
    failed = result.failed()
    if failed:
        for loss, masked, seed, err in failed:
            print(f"error: {loss} masked={masked} seed={seed}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_length(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out = out_dir(cfg.out, args.out, "gflow-lab-length")
    result = length_run(cfg, jobs=args.jobs)
    paths = write_length(result, cfg, out)
    learned, ideal = result.hidden_mass()
    cells = result.hidden_mode_cells()
    rec = result.recovery()
    print(f"hidden states: {len(result.mask)} (coordinate sum > {cfg.length_threshold})")
    print(f"hidden-region mass: learned {learned:.6g}, ideal {ideal:.6g}")
    print(f"hidden mode cells with >= 50% of ideal mass: {rec:.3f} of {len(cells)} (seed-mean distribution)")
    print("per seed: " + ", ".join(f"{r:.3f}" for r in result.per_seed_recovery()))
    print(f"heatmaps: {paths['learned_pgm']} {paths['reward_pgm']}")
    failed = [t for t in result.traces if t.error]
    for t in failed:
        print(f"error: seed {t.seed}: {t.error}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_certify(args) -> int:
    from gflowlab.theory import certify, render_table, write_csv

    dag = reward = None
    if args.dag:
        dag, reward = read_dag_file(args.dag)
    elif not 2 <= args.grid <= 5:
        raise ConfigError("certify runs on grids with 2 <= N <= 5 (or pass --dag)")
    summary = certify(
        side=args.grid,
        perturbations=args.perturbations,
        lemma_trials=args.lemma_trials,
        iid_trials=args.iid_trials,
        eps=args.eps,
        seed=args.seed,
        dag=dag,
        reward=reward,
        inject_bug=args.inject_bug,
    )
    print(render_table(summary), end="")
    if args.csv or args.out or os.environ.get("GFLOW_LAB_OUT"):
        path = Path(args.csv) if args.csv else out_dir("", args.out, ".") / "certify.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_csv(summary.reports, path)
        print(f"wrote {path}")
    if summary.passed:
        return EXIT_OK
    for r in summary.failures()[:20]:
        print(f"FAIL {r.check}: lhs {r.lhs:.17g} > rhs {r.rhs:.17g}; witness {r.witness}", file=sys.stderr)
    return EXIT_CERTIFY


def cmd_eval(args) -> int:
    path = Path(args.checkpoint)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        res = evaluate_checkpoint(path, out_dir("", args.out, str(path.parent)))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    print(f"JSD to normalized reward: {res['jsd']:.17g}")
    print(f"wrote {res['csv']} and {res['pgm']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gflow-lab", description="GFlowNet generalization experiments on hypergrids.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, helptext in (
        ("sweep", cmd_sweep, "TB/DB/FL-DB with and without hidden rewards"),
        ("length", cmd_length, "train with rewards hidden beyond a trajectory length"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", help="flat key = value config file")
        s.add_argument("--jobs", type=int, default=1, help="parallel training cells")
        s.add_argument("--out", help="output directory (default: config 'out', then $GFLOW_LAB_OUT)")
        s.add_argument("overrides", nargs="*", metavar="key=value")
        s.set_defaults(fn=fn)

    c = sub.add_parser("certify", help="numerically check the stability and generalization bounds")
    c.add_argument("--grid", type=int, default=4)
    c.add_argument("--perturbations", type=int, default=100)
    c.add_argument("--lemma-trials", type=int, default=1000)
    c.add_argument("--iid-trials", type=int, default=1000)
    c.add_argument("--eps", type=float, default=0.01)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--dag", help="custom DAG file instead of a grid")
    c.add_argument("--inject-bug", action="store_true", help="mis-scale total variation (self-test, must FAIL)")
    c.add_argument("--csv", help="write every report to this CSV file")
    c.add_argument("--out")
    c.set_defaults(fn=cmd_certify)

    e = sub.add_parser("eval", help="exact JSD and heatmap from a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        if args.verbose:
            log.exception("run failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
