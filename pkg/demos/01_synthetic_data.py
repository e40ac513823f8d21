"""Synthetic iris-like data, class-balanced batches and train/test splits.

Run: python3 demos/01_synthetic_data.py
"""

import numpy as np

from tripletiris.dataset import SplitPolicy, generate_synthetic, sample_batch, split_train_test

# Each class is a ring of radial and angular waves plus a few blobs; every
# sample of the class is that texture under a small rotation, a sub-pixel
# shift, a brightness offset and sensor noise.  Outside the ring is black.
ds = generate_synthetic(classes=16, per_class=20, resolution=64, seed=7)
print(f"{len(ds)} images, {len(ds.classes)} classes, resolution {ds.resolution}")
print("first ids:", [im.source_id for im in ds.images[:3]])

im = ds.images[0]
border = (im.pixels == 0).mean()
print(f"pixel range [{im.pixels.min():.2f}, {im.pixels.max():.2f}], black border covers {border:.0%}")

# Same class, different sample: small difference.  Different class: large.
same = np.abs(ds.images[0].pixels - ds.images[1].pixels).mean()
other = np.abs(ds.images[0].pixels - ds.images[20].pixels).mean()
print(f"mean |difference| same class {same:.3f}, other class {other:.3f}")

# A wider black border (smaller ring) is the variant used to show the
# collapse of triplet training without pre-training.
narrow = generate_synthetic(classes=2, per_class=2, resolution=64, seed=7, outer_radius=0.25)
print(f"outer_radius 0.25: border covers {(narrow.images[0].pixels == 0).mean():.0%}")

# Disjoint-class split: 8 classes to train, the other 8 to test.
rng = np.random.default_rng(7)
train, test = split_train_test(ds, SplitPolicy.disjoint_classes(8), rng)
print("train classes:", list(train.classes))
print("test classes: ", list(test.classes))

# Per-class splits keep every class on both sides.
tr, te = split_train_test(ds, SplitPolicy.per_class_first(15), rng)
print(f"per_class_first(15): {len(tr)} train / {len(te)} test images")

# P x K batch: P distinct classes, K images each (with replacement only if
# a class has fewer than K images).
batch = sample_batch(train, P=4, K=3, rng=rng)
print("batch labels:", batch.labels)
print("batch pixel tensor:", batch.pixels.shape)
