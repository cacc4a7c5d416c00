"""Compare hard and soft pyramid-level assignment for one made-up instance.

Hard assignment keeps only the cheapest level. Soft assignment keeps the
``top_k`` cheapest levels, each weighted by the selection network's
probability for that level. The kept weights are not renormalized. Run
with ``python demos/level_assignment.py``.
"""

import numpy as np

from sapd.selection import hard_select, select_net_loss, soft_assign

level_losses = np.array([1.8, 0.9, 1.1, np.inf])  # no anchors on the coarsest level
probabilities = np.array([0.15, 0.45, 0.30, 0.10])

print("level losses        ", level_losses)
print("level probabilities ", probabilities)
print("hard assignment      level", hard_select(level_losses))
for k in (1, 2, 3):
    kept = soft_assign(level_losses, probabilities, k)
    total = sum(w for _, w in kept)
    print(f"soft assignment k={k}  {kept}  (weights sum to {total:.2f})")

loss, _ = select_net_loss(probabilities[None], [hard_select(level_losses)])
print(f"selection cross entropy against the cheapest level: {loss:.4f}")
