"""Hide rewards and check nothing peeks.

Training reads rewards only through an instrumented view. Here one short run
per loss trains on an 8x8 grid with 48 hidden states, then the read log is
intersected with the hidden set.
"""

from gflowlab import GridSpec, TrainConfig, sample_hidden_states, train_seed
from gflowlab.hypergrid import mode_cells

spec = GridSpec(8)
mask = sample_hidden_states(spec, 48, seed=0)
print(f"hidden: {len(mask)} states, {len(set(mask.hidden) & set(mode_cells(spec)))} of them mode cells")

for loss in ("TB", "DB", "FL-DB"):
    cfg = TrainConfig(spec, loss, mask, iterations=300, batch_size=16, eval_every=100, hidden=32)
    tr = train_seed(cfg, seed=0)
    leaked = tr.reward_reads & mask.hidden
    print(f"{loss:6s} JSD {tr.points[0].jsd:.3f} -> {tr.final_jsd:.3f}  rewards read at {len(tr.reward_reads)} states, hidden reads: {len(leaked)}")
    print(f"       updates {tr.updates}, skipped {tr.skipped}")

# TB must drop a whole trajectory once it passes a hidden state, so with the
# default skip-trajectory mode it sees far fewer rewards than DB.
