"""Small residual CNN with hand-written reverse-mode gradients.

Layout: stem conv (stride 2) + ReLU + 2x2 max pool, then residual stages of
conv-ReLU-conv blocks with a skip connection (1x1 projection when the
channel count or stride changes), global average pool, and a fully
connected embedding layer.  An optional softmax head sits on top of the
embedding for the classification pre-training stage.  There is no batch
normalization.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, NamedTuple, Sequence

import numpy as np

from ..errors import DivergenceError
from ..triplet import MarginSpec, MinedTriplet, batch_hard_loss_and_grad
from . import layers

GradientSet = Dict[str, np.ndarray]

LOSS_KINDS = ("softmax_ce", "triplet_hard_margin", "triplet_soft_margin")


@dataclass(frozen=True)
class BackboneConfig:
    input_resolution: int = 64
    stage_channels: tuple = (16, 32, 64)
    blocks_per_stage: tuple = (2, 2, 2)
    embedding_dim: int = 128
    num_classes: int = 0
    stem_kernel: int = 5
    stem_stride: int = 2

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        if not self.stage_channels or len(self.stage_channels) != len(self.blocks_per_stage):
            raise ValueError("stage_channels and blocks_per_stage need equal length >= 1")
        if min(self.stage_channels) < 1 or min(self.blocks_per_stage) < 1:
            raise ValueError("stage widths and block counts must be positive")
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be >= 2")
        if self.num_classes < 0:
            raise ValueError("num_classes must be >= 0")
        if self.stem_kernel < 1 or self.stem_kernel % 2 == 0 or self.stem_stride < 1:
            raise ValueError("stem_kernel must be odd and stem_stride positive")
        if self.feature_size() < 1:
            raise ValueError(f"input_resolution {self.input_resolution} too small for this network")

    def feature_size(self) -> int:
        """Spatial side length of the last stage's feature map."""
        side = (self.input_resolution - 1) // self.stem_stride + 1
        side //= 2
        for _ in self.stage_channels[1:]:
            side = (side - 1) // 2 + 1
        return side

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["blocks_per_stage"] = list(self.blocks_per_stage)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)


def tiny_config(**overrides) -> BackboneConfig:
    """Resolution 16, two stages of widths 4 and 8, one block each, D = 8."""
    base = dict(input_resolution=16, stage_channels=(4, 8), blocks_per_stage=(1, 1), embedding_dim=8)
    base.update(overrides)
    return BackboneConfig(**base)


def resnet50_shape_config(**overrides) -> BackboneConfig:
    """ResNet-50 stage layout at 256 px with a 2048-wide embedding.

    Basic (two 3x3 conv) blocks stand in for the bottleneck blocks; widths
    follow the 3x3 layers of each stage.
    """
    base = dict(
        input_resolution=256,
        stage_channels=(64, 128, 256, 512),
        blocks_per_stage=(3, 4, 6, 3),
        embedding_dim=2048,
        stem_kernel=7,
        stem_stride=2,
    )
    base.update(overrides)
    return BackboneConfig(**base)


def _block_layout(config: BackboneConfig):
    """Yield (prefix, in_channels, out_channels, stride) for every residual block."""
    in_ch = config.stage_channels[0]
    for s, (out_ch, nblocks) in enumerate(zip(config.stage_channels, config.blocks_per_stage)):
        for b in range(nblocks):
            stride = 2 if (s > 0 and b == 0) else 1
            yield f"s{s}.b{b}", in_ch, out_ch, stride
            in_ch = out_ch


def _needs_projection(in_ch, out_ch, stride):
    return in_ch != out_ch or stride != 1


def parameter_shapes(config: BackboneConfig) -> dict:
    c0 = config.stage_channels[0]
    k = config.stem_kernel
    shapes = {"stem.w": (c0, 1, k, k), "stem.b": (c0,)}
    for prefix, cin, cout, stride in _block_layout(config):
        shapes[f"{prefix}.conv1.w"] = (cout, cin, 3, 3)
        shapes[f"{prefix}.conv1.b"] = (cout,)
        shapes[f"{prefix}.conv2.w"] = (cout, cout, 3, 3)
        shapes[f"{prefix}.conv2.b"] = (cout,)
        if _needs_projection(cin, cout, stride):
            shapes[f"{prefix}.proj.w"] = (cout, cin, 1, 1)
            shapes[f"{prefix}.proj.b"] = (cout,)
    shapes["fc.w"] = (config.embedding_dim, config.stage_channels[-1])
    shapes["fc.b"] = (config.embedding_dim,)
    if config.num_classes:
        shapes["head.w"] = (config.num_classes, config.embedding_dim)
        shapes["head.b"] = (config.num_classes,)
    return shapes


@dataclass(eq=False)
class BackboneModel:
    config: BackboneConfig
    params: dict
    head_classes: tuple = field(default=())

    def __post_init__(self):
        expected = parameter_shapes(self.config)
        if list(expected) != list(self.params):
            raise ValueError("parameter names do not match the config")
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != shape:
                raise ValueError(f"{name}: shape {self.params[name].shape} != {shape}")
        self.head_classes = tuple(self.head_classes)
        if self.head_classes and len(self.head_classes) != self.config.num_classes:
            raise ValueError("head_classes length must equal num_classes")

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @property
    def dtype(self):
        return self.params["fc.w"].dtype

    @property
    def has_head(self) -> bool:
        return self.config.num_classes > 0

    def copy(self) -> "BackboneModel":
        return BackboneModel(self.config, {k: v.copy() for k, v in self.params.items()}, self.head_classes)

    def astype(self, dtype) -> "BackboneModel":
        return BackboneModel(
            self.config, {k: v.astype(dtype) for k, v in self.params.items()}, self.head_classes
        )

    def __eq__(self, other):
        if not isinstance(other, BackboneModel):
            return NotImplemented
        return (
            self.config == other.config
            and self.head_classes == other.head_classes
            and list(self.params) == list(other.params)
            and all(
                a.dtype == b.dtype and np.array_equal(a, b)
                for a, b in zip(self.params.values(), other.params.values())
            )
        )


def init_model(config: BackboneConfig, seed: int, head_classes: Sequence = (), dtype=np.float32) -> BackboneModel:
    """He-normal fan-in init for conv kernels, 1/sqrt(fan_in) for linear layers, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:]))
        gain = 2.0 if len(shape) == 4 else 1.0
        params[name] = (rng.standard_normal(shape) * np.sqrt(gain / fan_in)).astype(dtype)
    if config.num_classes and not head_classes:
        head_classes = tuple(str(i) for i in range(config.num_classes))
    return BackboneModel(config, params, tuple(head_classes))


# ---------------------------------------------------------------------------
# forward / backward


def _as_input(model: BackboneModel, images) -> np.ndarray:
    """Stack images (LabeledImage, 2-D or 3-D arrays) to (N, 1, H, W)."""
    if isinstance(images, np.ndarray):
        x = images
    else:
        x = np.stack([getattr(im, "pixels", im) for im in images])
    if x.ndim == 2:
        x = x[None]
    res = model.config.input_resolution
    if x.shape[1:] != (res, res):
        raise ValueError(
            f"image resolution {x.shape[1]}x{x.shape[2]} does not match model resolution {res}x{res}"
        )
    return np.ascontiguousarray(x[:, None, :, :], dtype=model.dtype)


def _trunk_forward(model: BackboneModel, x: np.ndarray):
    p = model.params
    cfg = model.config
    caches = []
    h, c = layers.conv2d_forward(x, p["stem.w"], p["stem.b"], cfg.stem_stride, cfg.stem_kernel // 2)
    caches.append(c)
    h, c = layers.relu_forward(h)
    caches.append(c)
    h, c = layers.maxpool2_forward(h)
    caches.append(c)
    for prefix, cin, cout, stride in _block_layout(cfg):
        h, c = _block_forward(p, prefix, h, stride, _needs_projection(cin, cout, stride))
        caches.append(c)
    pooled, c = layers.avgpool_forward(h)
    caches.append(c)
    emb, c = layers.linear_forward(pooled, p["fc.w"], p["fc.b"])
    caches.append(c)
    return emb, caches


def _block_forward(p, prefix, x, stride, project):
    h1, c1 = layers.conv2d_forward(x, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"], stride, 1)
    a1, m1 = layers.relu_forward(h1)
    h2, c2 = layers.conv2d_forward(a1, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"], 1, 1)
    if project:
        skip, cp = layers.conv2d_forward(x, p[f"{prefix}.proj.w"], p[f"{prefix}.proj.b"], stride, 0)
    else:
        skip, cp = x, None
    out, m_out = layers.relu_forward(h2 + skip)
    return out, (c1, m1, c2, cp, m_out)


def _block_backward(p, prefix, dout, cache, grads):
    c1, m1, c2, cp, m_out = cache
    dsum = layers.relu_backward(dout, m_out)
    da1, grads[f"{prefix}.conv2.w"], grads[f"{prefix}.conv2.b"] = layers.conv2d_backward(dsum, c2)
    dh1 = layers.relu_backward(da1, m1)
    dx, grads[f"{prefix}.conv1.w"], grads[f"{prefix}.conv1.b"] = layers.conv2d_backward(dh1, c1)
    if cp is None:
        dx = dx + dsum
    else:
        dskip, grads[f"{prefix}.proj.w"], grads[f"{prefix}.proj.b"] = layers.conv2d_backward(dsum, cp)
        dx = dx + dskip
    return dx


def _trunk_backward(model: BackboneModel, caches, d_emb) -> GradientSet:
    p = model.params
    cfg = model.config
    grads: GradientSet = {}
    caches = list(caches)
    d_pooled, grads["fc.w"], grads["fc.b"] = layers.linear_backward(d_emb, caches.pop(), p["fc.w"])
    dh = layers.avgpool_backward(d_pooled, caches.pop())
    for prefix, cin, cout, stride in reversed(list(_block_layout(cfg))):
        dh = _block_backward(p, prefix, dh, caches.pop(), grads)
    dh = layers.maxpool2_backward(dh, caches.pop())
    dh = layers.relu_backward(dh, caches.pop())
    _, grads["stem.w"], grads["stem.b"] = layers.conv2d_backward(dh, caches.pop())
    return grads


def embed_batch(model: BackboneModel, images) -> np.ndarray:
    """Embeddings for a stack of images, shape (N, embedding_dim)."""
    emb, _ = _trunk_forward(model, _as_input(model, images))
    return emb


def forward_embed(model: BackboneModel, image) -> np.ndarray:
    """Length-D embedding of a single image."""
    return embed_batch(model, [image])[0]


def _require_head(model: BackboneModel):
    if not model.has_head:
        raise ValueError("model has no softmax head (num_classes = 0)")


def logits_batch(model: BackboneModel, images) -> np.ndarray:
    _require_head(model)
    emb = embed_batch(model, images)
    return emb @ model.params["head.w"].T + model.params["head.b"]


def forward_logits(model: BackboneModel, image) -> np.ndarray:
    """Pre-softmax class scores of a single image."""
    return logits_batch(model, [image])[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class LossOutput(NamedTuple):
    loss: float
    grads: GradientSet
    embeddings: np.ndarray
    triplets: list  # list[MinedTriplet], empty for softmax_ce


def loss_and_grads(model: BackboneModel, images, labels: Sequence, loss_kind: str,
                   margin: MarginSpec | None = None, reduction: str = "sum") -> LossOutput:
    """Forward pass, loss and exact parameter gradients for one batch.

    ``softmax_ce`` is averaged over the batch and needs ``labels`` that are
    members of ``model.head_classes``.  Triplet losses use batch-hard mining
    on L2 distances with the given reduction; head parameters receive zero
    gradient.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss_kind {loss_kind!r}")
    x = _as_input(model, images)
    emb, caches = _trunk_forward(model, x)
    triplets: list[MinedTriplet] = []
    head_grads = {}
    if loss_kind == "softmax_ce":
        _require_head(model)
        index = {c: i for i, c in enumerate(model.head_classes)}
        missing = [lab for lab in labels if lab not in index]
        if missing:
            raise ValueError(f"labels {sorted(set(missing))} are not classes of the softmax head")
        y = np.array([index[lab] for lab in labels])
        n = len(y)
        w, b = model.params["head.w"], model.params["head.b"]
        logits = emb @ w.T + b
        z = logits - logits.max(axis=1, keepdims=True)
        log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = float(-log_probs[np.arange(n), y].sum() / n)
        d_logits = np.exp(log_probs)
        d_logits[np.arange(n), y] -= 1.0
        d_logits /= n
        d_emb = d_logits @ w
        head_grads = {"head.w": d_logits.T @ emb, "head.b": d_logits.sum(axis=0)}
    else:
        if margin is None:
            margin = MarginSpec.soft() if loss_kind == "triplet_soft_margin" else None
        if margin is None or margin.loss_kind != loss_kind:
            raise ValueError(f"{loss_kind} needs a matching MarginSpec")
        loss, d_emb, triplets = batch_hard_loss_and_grad(emb, labels, margin, reduction)
    grads = _trunk_backward(model, caches, d_emb)
    if model.has_head:
        grads["head.w"] = head_grads.get("head.w", np.zeros_like(model.params["head.w"]))
        grads["head.b"] = head_grads.get("head.b", np.zeros_like(model.params["head.b"]))
    grads = {name: grads[name].astype(model.dtype, copy=False) for name in model.params}
    return LossOutput(loss, grads, emb, triplets)


def backward(model: BackboneModel, batch, loss_kind: str, margin: MarginSpec | None = None,
             reduction: str = "sum"):
    """Return ``(loss, grads)`` for a Batch under the selected objective."""
    out = loss_and_grads(model, batch.images, batch.labels, loss_kind, margin, reduction)
    return out.loss, out.grads


# ---------------------------------------------------------------------------
# optimizer


def sgd_step(model: BackboneModel, grads: GradientSet, lr: float, momentum: float = 0.9,
             state: dict | None = None, frozen: Sequence[str] = ()):
    """Classical momentum: v <- momentum * v + g; p <- p - lr * v.

    Returns ``(new_model, new_state)`` without touching the inputs.
    Parameters named in ``frozen`` are copied through unchanged.
    """
    if set(grads) != set(model.params):
        raise ValueError("gradient names do not match model parameters")
    state = state or {}
    new_params, new_state = {}, {}
    for name, p in model.params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}")
        if name in frozen:
            new_params[name] = p.copy()
            if name in state:
                new_state[name] = state[name].copy()
            continue
        v = momentum * state[name] + g if name in state else g.astype(p.dtype, copy=True)
        v = v.astype(p.dtype, copy=False)
        new_params[name] = (p - lr * v).astype(p.dtype, copy=False)
        new_state[name] = v
    updated = BackboneModel(model.config, new_params, model.head_classes)
    for name, p in new_params.items():
        if not np.all(np.isfinite(p)):
            raise DivergenceError(f"parameter {name} became non-finite")
    return updated, new_state
