"""Training-time random augmentation and the six-view test-time set.

Run: python3 demos/02_augmentation.py
"""

from collections import Counter

import numpy as np

from tripletiris.augment import TTA_ORDER, AugmentConfig, apply, draw_train_augmentation, tta_set
from tripletiris.dataset import generate_synthetic

image = generate_synthetic(2, 2, 64, seed=4).images[0]

# The test-time set always has the same six views in the same order.
views = tta_set(image)
for kind, view in zip(TTA_ORDER, views):
    diff = np.abs(view.pixels - image.pixels).mean()
    print(f"{kind.value:16s} mean |change| {diff:.4f}")

# Flips are exact pixel permutations and undo themselves.
twice = apply("flip_horizontal", apply("flip_horizontal", image))
print("flip twice == original:", twice.pixels.tobytes() == image.pixels.tobytes())

# Unsharp masking raises local contrast; a flat image is left alone.
sharp = apply("sharpen", image, AugmentConfig(sigma=1.0, amount=1.0))
print(f"std before {image.pixels.std():.4f}, after sharpening {sharp.pixels.std():.4f}")

# During training each image gets at most one augmentation: identity half
# the time, otherwise one of the five other kinds uniformly.
rng = np.random.default_rng(0)
counts = Counter(draw_train_augmentation(rng, 0.5).value for _ in range(10_000))
for kind, n in sorted(counts.items()):
    print(f"{kind:16s} {n / 10_000:.3f}")
