"""Pre-train, triplet-train and evaluate on held-out classes.

Sixteen synthetic classes are split into eight for training and eight that
the network never sees.  The script reports verification metrics for the
held-out classes three times: straight after softmax pre-training, after
triplet training with plain embeddings, and after triplet training with
six-view test-time augmentation.

Run: python3 demos/05_train_and_evaluate.py   (about 2 minutes)
"""

import numpy as np

from tripletiris.augment import AugmentConfig
from tripletiris.backbone import BackboneConfig, init_model
from tripletiris.dataset import SplitPolicy, generate_synthetic, split_train_test
from tripletiris.evaluation import evaluate
from tripletiris.trainer import TrainConfig, pretrain, train_triplet

full = generate_synthetic(16, 20, 64, seed=7)
train, test = split_train_test(full, SplitPolicy.disjoint_classes(8), np.random.default_rng(7))
test, _ = split_train_test(test, SplitPolicy.per_class_first(10), np.random.default_rng(0))
print(f"train classes {sorted(train.classes)}")
print(f"test classes  {sorted(test.classes)} ({len(test.images)} images)")

cfg = TrainConfig(P=8, K=4, lr=0.003, triplet_lr=1e-4, pretrain_target_acc=1.0, pretrain_max_epochs=200,
                  triplet_steps=600, seed=1)
aug = AugmentConfig(p_train=1.0)  # every training image gets one random augmentation
model = init_model(BackboneConfig(num_classes=8), cfg.seed, head_classes=train.class_ids)
rng = np.random.default_rng(cfg.seed)


def show(tag, report):
    print(f"{tag:<28} EER {report.eer:.4f}  FRR@FAR=1e-3 {report.frr_at_far:.4f}  "
          f"Rank-1 {report.rank1:.4f}")


model, log = pretrain(model, train, cfg, rng, aug)
accs = [r.train_acc for r in log.stage("pretrain") if r.train_acc is not None]
print(f"pre-training: {len(accs)} epochs, train accuracy {accs[-1]:.3f}")
show("after pre-training, TTA", evaluate(model, test, aug=aug))

model, log = train_triplet(model, train, cfg, rng, aug, log)
losses = [r.loss for r in log.stage("triplet")]
print(f"triplet training: soft-margin loss {losses[0]:.2f} at step 1, "
      f"{np.mean(losses[-60:]):.4f} over the last 60 steps")
show("after triplets, plain", evaluate(model, test, tta=False))
show("after triplets, TTA", evaluate(model, test, aug=aug))
