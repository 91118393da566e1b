"""Numerically certify the stability and off-policy bounds.

Each check is an inequality that is proved to hold; the suite evaluates both
sides exactly by enumerating every trajectory. A deliberately mis-scaled
total variation shows what a failure looks like.
"""

from gflowlab.theory import certify, render_table

good = certify(side=4, perturbations=100, lemma_trials=300, iid_trials=300)
print(render_table(good))

bad = certify(side=4, perturbations=10, lemma_trials=100, iid_trials=50, inject_bug=True)
print(render_table(bad))
worst = min(bad.failures(), key=lambda r: r.slack)
print(f"worst failure: {worst.check} lhs={worst.lhs:.4g} rhs={worst.rhs:.4g} at {worst.witness}")
