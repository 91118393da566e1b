"""What distribution does a policy actually sample?

On a small grid we can answer exactly. This walks through three policies on
a 3x3 hypergrid (uniform, a random network, and the loss minimizer) and
compares their terminal distributions against the normalized reward.
"""

import numpy as np

from gflowlab import GridSpec, RewardTable, build_grid, edge_policy, exact_terminal_distribution, init_params, jsd, normalized_reward
from gflowlab.dag import enumerate_trajectories
from gflowlab.policy import PolicyConfig, uniform_forward
from gflowlab.theory import exact_minimizer

spec = GridSpec(3, ())
dag = build_grid(spec)
reward = RewardTable(spec, np.array([1.0, 1.0, 4.0, 1.0, 2.0, 1.0, 4.0, 1.0, 8.0]))
target = normalized_reward(reward)
print(f"{len(enumerate_trajectories(dag))} complete trajectories, Z = {reward.Z}")
print("target R/Z:\n", np.round(target.as_grid(spec), 4))

# Uniform choices at every state favour short trajectories: stopping at (0,0)
# already takes a third of the mass.
uni = exact_terminal_distribution(uniform_forward(dag), dag)
print("\nuniform policy:\n", np.round(uni.as_grid(spec), 4), "\nJSD to target", round(jsd(uni, target), 4))

net = edge_policy(init_params(PolicyConfig(3, hidden=16), seed=0), dag)
d = exact_terminal_distribution(net, dag)
print("\nfreshly initialized network:\n", np.round(d.as_grid(spec), 4), "\nJSD to target", round(jsd(d, target), 4))

# The minimizer with uniform backward policy reproduces R/Z exactly.
m = exact_minimizer(dag, reward)
d = m.terminal_distribution()
print("\nexact minimizer:\n", np.round(d.as_grid(spec), 4), "\nJSD to target", jsd(d, target))
