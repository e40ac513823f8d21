"""Pairwise distances, online batch-hard mining and the triplet losses.

The training metric is the plain L2 distance between raw (unnormalized)
embeddings.  Mining treats the argmax/argmin as a fixed index selection,
so the loss gradient flows only through the selected pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

METRICS = ("euclidean_l2", "cosine")
_METRIC_ALIASES = {"l2": "euclidean_l2", "euclidean": "euclidean_l2"}


def canonical_metric(metric: str) -> str:
    metric = _METRIC_ALIASES.get(metric, metric)
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS} or 'l2'")
    return metric


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray
    metric: str


class MinedTriplet(NamedTuple):
    anchor_idx: int
    positive_idx: int
    negative_idx: int
    d_ap: float
    d_an: float


@dataclass(frozen=True)
class MarginSpec:
    kind: str = "soft_margin"
    m: float = 0.0

    def __post_init__(self):
        if self.kind not in ("hard_margin", "soft_margin"):
            raise ValueError(f"unknown margin kind {self.kind!r}")
        if self.kind == "hard_margin" and not self.m > 0:
            raise ValueError("hard margin requires m > 0")

    @classmethod
    def hard(cls, m: float) -> "MarginSpec":
        return cls("hard_margin", float(m))

    @classmethod
    def soft(cls) -> "MarginSpec":
        return cls("soft_margin", 0.0)

    @property
    def loss_kind(self) -> str:
        return "triplet_hard_margin" if self.kind == "hard_margin" else "triplet_soft_margin"

    def __str__(self):
        return "soft" if self.kind == "soft_margin" else repr(self.m)

    @classmethod
    def parse(cls, text) -> "MarginSpec":
        if isinstance(text, MarginSpec):
            return text
        text = str(text).strip().lower()
        if text in ("soft", "soft_margin"):
            return cls.soft()
        return cls.hard(float(text))


def _as_matrix(embeddings) -> np.ndarray:
    if isinstance(embeddings, np.ndarray):
        return np.asarray(embeddings, dtype=np.float64)
    rows = [getattr(e, "values", e) for e in embeddings]
    return np.asarray(rows, dtype=np.float64)


def pairwise_distances(embeddings, metric: str = "euclidean_l2") -> DistanceMatrix:
    """All-pairs L2 or cosine (1 - cos similarity) distances.

    ``embeddings`` is an (N, D) array or a sequence of objects exposing
    ``.values``.  The result is exactly symmetric with a zero diagonal.
    """
    metric = canonical_metric(metric)
    x = _as_matrix(embeddings)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 embeddings of equal dimension")
    if metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0):
            raise ValueError("cosine distance is undefined for a zero vector")
        d = np.clip(squareform(pdist(x, "cosine")), 0.0, 2.0)
    else:
        d = squareform(pdist(x, "euclidean"))
    return DistanceMatrix(d, metric)


def mine_batch_hard(dm, labels: Sequence) -> list[MinedTriplet]:
    """One triplet per anchor: farthest same-class, nearest other-class element.

    Ties go to the lowest index.
    """
    d = dm.values if isinstance(dm, DistanceMatrix) else np.asarray(dm)
    labels = np.asarray(labels)
    n = len(labels)
    if d.shape != (n, n):
        raise ValueError(f"distance matrix {d.shape} does not match {n} labels")
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    if not pos_mask.any(axis=1).all():
        bad = int(np.flatnonzero(~pos_mask.any(axis=1))[0])
        raise ValueError(f"anchor {bad} has no same-class partner")
    if not neg_mask.any(axis=1).all():
        bad = int(np.flatnonzero(~neg_mask.any(axis=1))[0])
        raise ValueError(f"anchor {bad} has no different-class element")
    # argmax/argmin return the first occurrence, i.e. the lowest index
    pos = np.where(pos_mask, d, -np.inf).argmax(axis=1)
    neg = np.where(neg_mask, d, np.inf).argmin(axis=1)
    rows = np.arange(n)
    d_ap = d[rows, pos]
    d_an = d[rows, neg]
    return [
        MinedTriplet(int(a), int(pos[a]), int(neg[a]), float(d_ap[a]), float(d_an[a]))
        for a in range(n)
    ]


def is_hard(t: MinedTriplet, m: float) -> bool:
    """d_ap + m >= d_an."""
    return t.d_ap + m >= t.d_an


def hard_margin_loss(triplets: Sequence[MinedTriplet], m: float, reduction: str = "sum") -> float:
    """Sum of (m + d_ap - d_an) over hard triplets; easy ones contribute 0."""
    terms = [m + t.d_ap - t.d_an for t in triplets if is_hard(t, m)]
    total = float(sum(terms))
    return _reduce(total, len(triplets), reduction)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def soft_margin_loss(triplets: Sequence[MinedTriplet], reduction: str = "sum") -> float:
    """Sum of softplus(d_ap - d_an) over every mined triplet."""
    if not triplets:
        return 0.0
    gaps = np.array([t.d_ap - t.d_an for t in triplets])
    return _reduce(float(softplus(gaps).sum()), len(triplets), reduction)


def _reduce(total: float, count: int, reduction: str) -> float:
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total / count if count else 0.0
    raise ValueError(f"unknown reduction {reduction!r}")


def _sigmoid(x):
    s = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + s), s / (1.0 + s))


def batch_hard_loss_and_grad(embeddings: np.ndarray, labels: Sequence, margin: MarginSpec,
                             reduction: str = "sum"):
    """Loss and d(loss)/d(embeddings) for batch-hard mining on L2 distances.

    Returns ``(loss, grad, triplets)``.  The gradient of an L2 distance at
    exactly zero separation is taken as 0.
    """
    e = np.asarray(embeddings)
    diff = e[:, None, :] - e[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    triplets = mine_batch_hard(dist, labels)
    n = len(triplets)
    a = np.arange(n)
    p = np.array([t.positive_idx for t in triplets])
    q = np.array([t.negative_idx for t in triplets])
    d_ap = dist[a, p]
    d_an = dist[a, q]
    if margin.kind == "soft_margin":
        loss = float(softplus(d_ap - d_an).sum())
        w = _sigmoid(d_ap - d_an)
    else:
        hard = d_ap + margin.m >= d_an
        loss = float((margin.m + d_ap - d_an)[hard].sum())
        w = hard.astype(np.float64)
    if reduction == "mean":
        loss /= n
        w = w / n
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")

    def unit(i, j, d):
        safe = np.where(d > 0, d, 1.0)
        return np.where((d > 0)[:, None], diff[i, j] / safe[:, None], 0.0)

    u_ap = unit(a, p, d_ap) * w[:, None]
    u_an = unit(a, q, d_an) * w[:, None]
    grad = np.zeros_like(e, dtype=np.float64)
    # fixed sequential accumulation order keeps the result reproducible
    for i in range(n):
        grad[a[i]] += u_ap[i] - u_an[i]
        grad[p[i]] -= u_ap[i]
        grad[q[i]] += u_an[i]
    return loss, grad.astype(e.dtype, copy=False), triplets
