"""A two-minute version of the generalization sweep.

Three losses, with and without 48 hidden states, on the 8x8 grid. Fewer
seeds and iterations than the shipped config, so the numbers are noisier.
"""

from pathlib import Path

from gflowlab.config import load_config
from gflowlab.experiments import sweep, write_sweep

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "sweep_8x8.cfg", ["seeds=0,1", "iterations=1000"])
res = sweep(cfg)
for (loss, masked), v in sorted(res.finals().items()):
    print(f"{loss:6s} {'masked  ' if masked else 'unmasked'} final mean JSD {v:.4f}")
for claim, holds, detail in res.ordering_report():
    print(f"  {claim}: {'holds' if holds else 'does not hold'} ({detail})")
out = write_sweep(res, cfg, Path("mini-sweep"))
print("curves in", out["curves"])
