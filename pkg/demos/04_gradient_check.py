"""The backbone's hand-written backward pass against finite differences.

Run: python3 demos/04_gradient_check.py   (about 15 seconds)
"""

import numpy as np

from tripletiris.backbone import init_model, loss_and_grads, parameter_shapes, tiny_config
from tripletiris.triplet import MarginSpec

# Tiny network: 16x16 input, two stages of widths 4 and 8, D = 8, softmax
# head over three classes.  Float64 so that central differences are exact
# to about 1e-10.
config = tiny_config(num_classes=3)
model = init_model(config, seed=0, head_classes=("a", "b", "c"), dtype=np.float64)
print(f"{model.parameter_count} parameters in {len(parameter_shapes(config))} tensors")

rng = np.random.default_rng(0)
images = rng.random((6, 16, 16))
labels = ["a", "a", "b", "b", "c", "c"]

for kind, margin in [("softmax_ce", None), ("triplet_soft_margin", MarginSpec.soft()),
                     ("triplet_hard_margin", MarginSpec.hard(50.0))]:
    out = loss_and_grads(model, images, labels, kind, margin)
    worst = 0.0
    for name in ("stem.w", "s1.b0.proj.w", "fc.w"):
        p = model.params[name]
        # spot-check a few coordinates per tensor
        for idx in list(np.ndindex(p.shape))[:: max(1, p.size // 6)]:
            old = p[idx]
            p[idx] = old + 1e-4
            up = loss_and_grads(model, images, labels, kind, margin).loss
            p[idx] = old - 1e-4
            down = loss_and_grads(model, images, labels, kind, margin).loss
            p[idx] = old
            num = (up - down) / 2e-4
            ana = out.grads[name][idx]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-6))
    print(f"{kind:20s} loss {out.loss:9.4f}  worst relative error {worst:.1e}")
