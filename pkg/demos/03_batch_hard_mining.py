"""Batch-hard triplet mining and the two triplet losses on hand-made embeddings.

Run: python3 demos/03_batch_hard_mining.py
"""

import numpy as np

from tripletiris.triplet import (
    MarginSpec,
    batch_hard_loss_and_grad,
    hard_margin_loss,
    is_hard,
    mine_batch_hard,
    pairwise_distances,
    soft_margin_loss,
)

# Four points on a line, two classes.  For anchor 0 (class A) the hardest
# positive is the farthest A and the hardest negative is the closest B.
x = np.array([[0.0], [1.0], [2.0], [3.0]])
labels = ["A", "A", "B", "B"]
dm = pairwise_distances(x, "euclidean_l2")
print(dm.values)
for t in mine_batch_hard(dm, labels):
    print(f"anchor {t.anchor_idx}: positive {t.positive_idx} (d={t.d_ap:.1f}), "
          f"negative {t.negative_idx} (d={t.d_an:.1f}), hard at m=1.5: {is_hard(t, 1.5)}")

triplets = mine_batch_hard(dm, labels)
print("hard-margin loss, m=1.5:", hard_margin_loss(triplets, 1.5))
print("soft-margin loss:       ", round(soft_margin_loss(triplets), 6))

# A collapsed network maps everything to one point.  Every distance is 0,
# mining falls back to the lowest index, and the soft margin is log 2 per
# anchor with a zero gradient: nothing pushes the points apart.
collapsed = np.ones((6, 4))
loss, grad, _ = batch_hard_loss_and_grad(collapsed, [0, 0, 1, 1, 2, 2], MarginSpec.soft())
print(f"collapsed: loss {loss:.4f} = 6 log 2 = {6 * np.log(2):.4f}, max |grad| {np.abs(grad).max()}")

# Random embeddings: the gradient pulls each anchor toward its hardest
# positive and away from its hardest negative.
rng = np.random.default_rng(1)
e = rng.normal(size=(8, 3))
lab = [0, 0, 1, 1, 2, 2, 3, 3]
loss, grad, _ = batch_hard_loss_and_grad(e, lab, MarginSpec.soft())
after, _, _ = batch_hard_loss_and_grad(e - 0.05 * grad, lab, MarginSpec.soft())
print(f"one gradient step on the embeddings: {loss:.4f} -> {after:.4f}")
