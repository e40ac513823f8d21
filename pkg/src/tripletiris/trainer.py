"""Two-stage training: softmax pre-training, then batch-hard triplet fine-tuning."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, random_train_augment
from .backbone import BackboneModel, logits_batch, loss_and_grads, sgd_step
from .dataset import Dataset, sample_batch
from .errors import DatasetError, DivergenceError
from .evaluation import all_to_all, compute_eer, plain_embed
from .triplet import MarginSpec, is_hard

log = logging.getLogger(__name__)

HEAD_PARAMS = ("head.w", "head.b")


@dataclass(frozen=True)
class TrainConfig:
    P: int = 4
    K: int = 4
    lr: float = 0.01
    momentum: float = 0.9
    triplet_lr: float | None = None
    pretrain_target_acc: float = 0.90
    pretrain_max_epochs: int = 60
    triplet_steps: int = 200
    margin: MarginSpec = field(default_factory=MarginSpec.soft)
    reduction: str = "sum"
    seed: int = 0
    eval_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "margin", MarginSpec.parse(self.margin))
        if self.P < 2 or self.K < 2:
            raise ValueError("P and K must both be >= 2")
        if not 0.0 <= self.pretrain_target_acc <= 1.0:
            raise ValueError("pretrain_target_acc must lie in [0, 1]")
        if self.reduction not in ("sum", "mean"):
            raise ValueError("reduction must be 'sum' or 'mean'")
        if self.pretrain_max_epochs < 0 or self.triplet_steps < 0 or self.eval_every < 0:
            raise ValueError("budgets must be non-negative")

    @property
    def effective_triplet_lr(self) -> float:
        return self.lr if self.triplet_lr is None else self.triplet_lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["margin"] = str(self.margin)
        return d


@dataclass(frozen=True)
class LogRecord:
    step: int
    stage: str
    loss: float
    hard_fraction: float | None = None
    gap: float | None = None
    train_acc: float | None = None
    val_eer: float | None = None

    FIELDS = ("step", "stage", "loss", "hard_fraction", "gap", "train_acc", "val_eer")

    def to_line(self) -> str:
        parts = []
        for name in self.FIELDS:
            v = getattr(self, name)
            if v is None:
                text = "-"
            elif isinstance(v, float):
                text = repr(v)
            else:
                text = str(v)
            parts.append(f"{name}={text}")
        return " ".join(parts)

    @classmethod
    def from_line(cls, line: str) -> "LogRecord":
        kv = dict(item.split("=", 1) for item in line.split())
        conv = {"step": int, "stage": str}
        values = {}
        for name in cls.FIELDS:
            raw = kv[name]
            values[name] = None if raw == "-" else conv.get(name, float)(raw)
        return cls(**values)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def next_step(self) -> int:
        return self.records[-1].step + 1 if self.records else 1

    def append(self, record: LogRecord):
        if self.records and record.step <= self.records[-1].step:
            raise ValueError("log step indices must increase")
        if not math.isfinite(record.loss):
            raise DivergenceError(f"non-finite loss at step {record.step}", record.step)
        self.records.append(record)

    def stage(self, name: str) -> list:
        return [r for r in self.records if r.stage == name]

    def to_text(self, header: dict | None = None) -> str:
        lines = []
        if header:
            lines += [f"# {k} = {v}" for k, v in header.items()]
        lines += [f"# flag = {f}" for f in self.flags]
        lines += [r.to_line() for r in self.records]
        return "\n".join(lines) + "\n"

    def write(self, path, header: dict | None = None):
        Path(path).write_text(self.to_text(header), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "TrainLog":
        out = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("# flag = "):
                out.flags.append(line[len("# flag = "):])
            elif line and not line.startswith("#"):
                out.records.append(LogRecord.from_line(line))
        return out


def _check_loss(loss: float, step: int):
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss at step {step}", step)


def _augment_all(images, rng, aug: AugmentConfig):
    return [random_train_augment(im, rng, aug) for im in images]


def train_accuracy(model: BackboneModel, dataset: Dataset, batch_size: int = 64) -> float:
    """Top-1 accuracy of the softmax head on unaugmented images."""
    correct = 0
    for start in range(0, len(dataset), batch_size):
        chunk = dataset.images[start : start + batch_size]
        pred = logits_batch(model, chunk).argmax(axis=1)
        correct += sum(model.head_classes[p] == im.class_id for p, im in zip(pred, chunk))
    return correct / len(dataset)


def pretrain(model: BackboneModel, dataset: Dataset, cfg: TrainConfig, rng: np.random.Generator,
             aug: AugmentConfig | None = None, train_log: TrainLog | None = None):
    """Cross-entropy epochs until train top-1 accuracy reaches the target.

    One epoch is a pass over a random permutation of the dataset in
    mini-batches of P * K images.  Returns ``(model, log)``.
    """
    aug = aug or AugmentConfig()
    train_log = train_log if train_log is not None else TrainLog()
    if not model.has_head:
        raise ValueError("pre-training needs a model with a softmax head")
    if set(dataset.class_ids) != set(model.head_classes):
        raise ValueError("softmax head classes do not match the training classes")
    bs = cfg.P * cfg.K
    state = None
    for epoch in range(1, cfg.pretrain_max_epochs + 1):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), bs):
            step = train_log.next_step
            chunk = [dataset.images[i] for i in order[start : start + bs]]
            images = _augment_all(chunk, rng, aug)
            out = loss_and_grads(model, images, [im.class_id for im in chunk], "softmax_ce")
            _check_loss(out.loss, step)
            model, state = sgd_step(model, out.grads, cfg.lr, cfg.momentum, state)
            last = start + bs >= len(order)
            acc = train_accuracy(model, dataset) if last else None
            train_log.append(LogRecord(step, "pretrain", out.loss, train_acc=acc))
        log.info("pretrain epoch %d: train accuracy %.4f", epoch, acc)
        if acc >= cfg.pretrain_target_acc:
            break
    else:
        if cfg.pretrain_max_epochs and "pretrain_target_not_reached" not in train_log.flags:
            train_log.flags.append("pretrain_target_not_reached")
    return model, train_log


def validation_eer(model: BackboneModel, dataset: Dataset) -> float:
    scores = all_to_all(plain_embed(model, list(dataset.images)), "cosine")
    return compute_eer(scores)[0]


def train_triplet(model: BackboneModel, dataset: Dataset, cfg: TrainConfig, rng: np.random.Generator,
                  aug: AugmentConfig | None = None, train_log: TrainLog | None = None,
                  val: Dataset | None = None):
    """Batch-hard triplet training on P x K batches; the softmax head stays frozen.

    Each record carries the loss, the fraction of hard triplets (with the
    run's margin, or d_ap >= d_an under the soft margin) and the mean
    d_an - d_ap gap of the mined triplets.
    """
    aug = aug or AugmentConfig()
    train_log = train_log if train_log is not None else TrainLog()
    if len(dataset.classes) < cfg.P:
        raise DatasetError(f"dataset has {len(dataset.classes)} classes, P={cfg.P}")
    if not train_log.stage("pretrain") and "triplet_without_pretrain" not in train_log.flags:
        train_log.flags.append("triplet_without_pretrain")
    margin = cfg.margin
    hard_m = margin.m if margin.kind == "hard_margin" else 0.0
    lr = cfg.effective_triplet_lr
    state = None
    for i in range(cfg.triplet_steps):
        step = train_log.next_step
        batch = sample_batch(dataset, cfg.P, cfg.K, rng)
        images = _augment_all(batch.images, rng, aug)
        out = loss_and_grads(model, images, batch.labels, margin.loss_kind, margin, cfg.reduction)
        _check_loss(out.loss, step)
        model, state = sgd_step(model, out.grads, lr, cfg.momentum, state, frozen=HEAD_PARAMS)
        hard = sum(is_hard(t, hard_m) for t in out.triplets) / len(out.triplets)
        gap = float(np.mean([t.d_an - t.d_ap for t in out.triplets]))
        val_eer = None
        if val is not None and cfg.eval_every and (i + 1) % cfg.eval_every == 0:
            val_eer = validation_eer(model, val)
        train_log.append(LogRecord(step, "triplet", out.loss, hard, gap, val_eer=val_eer))
    return model, train_log


def run_training(model: BackboneModel, dataset: Dataset, cfg: TrainConfig, aug: AugmentConfig | None = None,
                 skip_pretrain: bool = False, val: Dataset | None = None):
    """Pre-train (unless skipped) and then triplet-train from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    train_log = TrainLog()
    if not skip_pretrain:
        model, train_log = pretrain(model, dataset, cfg, rng, aug, train_log)
    return train_triplet(model, dataset, cfg, rng, aug, train_log, val)
