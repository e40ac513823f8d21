"""Why the softmax pre-training stage matters.

Every image here is a thin textured ring inside a wide, exactly black border,
so most pixels are shared by all classes.  Triplet training from random
weights sees tiny distances everywhere and the hard-triplet gap
d_an - d_ap never opens up.  Starting from a softmax-pre-trained backbone,
the same number of triplet steps separates the classes.

Run: python3 demos/06_collapse_without_pretraining.py   (about 3 minutes)
"""

import numpy as np

from tripletiris.augment import AugmentConfig
from tripletiris.backbone import BackboneConfig, init_model
from tripletiris.dataset import generate_synthetic
from tripletiris.trainer import TrainConfig, run_training

ds = generate_synthetic(8, 20, 64, seed=11, outer_radius=0.25)
ring = np.mean([np.count_nonzero(img.pixels) / img.pixels.size for img in ds.images])
print(f"{len(ds.images)} images; on average {ring:.0%} of the pixels are inside the ring")

cfg = TrainConfig(P=8, K=4, lr=0.003, triplet_lr=1e-4, pretrain_target_acc=1.0, pretrain_max_epochs=200,
                  triplet_steps=200, seed=2)
aug = AugmentConfig(p_train=1.0)

for pre in (False, True):
    model = init_model(BackboneConfig(num_classes=8), cfg.seed, head_classes=ds.class_ids)
    model, log = run_training(model, ds, cfg, aug, skip_pretrain=not pre)
    steps = log.stage("triplet")
    tail = steps[-len(steps) // 10:]
    name = "with pre-training   " if pre else "without pre-training"
    print(f"{name}: gap at step 1 {steps[0].gap:8.4f}, mean gap over the last 20 steps "
          f"{np.mean([r.gap for r in tail]):8.4f}, loss {steps[0].loss:.3f} -> "
          f"{np.mean([r.loss for r in tail]):.3f}, flags {log.flags}")

# If every embedding is the same point, each of the 32 anchors contributes
# softplus(0) = log 2 to the summed soft-margin loss.
print(f"loss of a fully collapsed batch: 32 log 2 = {32 * np.log(2):.3f}")
