"""Test-time-augmented embeddings, all-to-all matching and verification metrics.

Scores are distances: a pair is accepted iff its distance is <= the
threshold.  The threshold sweep runs over every distinct score plus a
threshold below all of them, so

    FAR(t) = #{impostor <= t} / #impostor
    FRR(t) = #{genuine  >  t} / #genuine

start at (0, 1) and end at (1, 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .augment import AugmentConfig, tta_set
from .backbone import BackboneModel, embed_batch
from .triplet import canonical_metric, pairwise_distances


class TtaEmbedding(NamedTuple):
    values: np.ndarray
    source_id: str
    class_id: str


@dataclass(frozen=True)
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.genuine, dtype=np.float64).ravel()
        i = np.asarray(self.impostor, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(i))):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "genuine", g)
        object.__setattr__(self, "impostor", i)

    def require_both(self):
        if self.genuine.size == 0:
            raise ValueError("genuine score list is empty")
        if self.impostor.size == 0:
            raise ValueError("impostor score list is empty (need at least two classes)")


@dataclass
class EvalReport:
    eer: float
    threshold_at_eer: float
    frr_at_far: float
    far_target: float
    rank1: float
    roc: list = field(repr=False)
    metric: str = "cosine"
    n_embeddings: int = 0
    n_genuine: int = 0
    n_impostor: int = 0
    rank1_excluded: int = 0

    def to_text(self) -> str:
        lines = [
            f"metric: {self.metric}",
            f"embeddings: {self.n_embeddings}",
            f"genuine_pairs: {self.n_genuine}",
            f"impostor_pairs: {self.n_impostor}",
            f"EER: {self.eer:.6f} ({100 * self.eer:.4f}%)",
            f"threshold_at_EER: {self.threshold_at_eer!r}",
            f"FRR@{_percent(self.far_target)} FAR: {self.frr_at_far:.6f} ({100 * self.frr_at_far:.4f}%)",
            f"Rank-1: {self.rank1:.6f} ({100 * self.rank1:.4f}%)",
            f"rank1_excluded_probes: {self.rank1_excluded}",
        ]
        return "\n".join(lines) + "\n"

    def write_roc(self, path) -> None:
        write_roc(self.roc, path)


def _percent(rate: float) -> str:
    return f"{100 * rate:g}%"


# ---------------------------------------------------------------------------
# embeddings and matching


def plain_embed(model: BackboneModel, images, batch_size: int = 64) -> list[TtaEmbedding]:
    """Single-view embeddings (no test-time augmentation)."""
    out = []
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        emb = embed_batch(model, chunk)
        out.extend(TtaEmbedding(e.astype(np.float64), im.source_id, im.class_id) for e, im in zip(emb, chunk))
    return out


def tta_embed(model: BackboneModel, image, aug: AugmentConfig | None = None) -> TtaEmbedding:
    """Concatenate the embeddings of the six canonical views, in order."""
    views = tta_set(image, aug)
    emb = embed_batch(model, views)
    return TtaEmbedding(emb.reshape(-1).astype(np.float64), image.source_id, image.class_id)


def tta_embed_all(model: BackboneModel, images, aug: AugmentConfig | None = None) -> list[TtaEmbedding]:
    return [tta_embed(model, im, aug) for im in images]


def _distance_matrix(embeddings, metric: str, normalize: bool):
    x = np.asarray([e.values for e in embeddings], dtype=np.float64)
    if normalize:
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        x = x / np.where(norms > 0, norms, 1.0)
    return pairwise_distances(x, metric).values


def all_to_all(embeddings: Sequence[TtaEmbedding], metric: str = "cosine", normalize: bool = False) -> ScoreSet:
    """Every unordered pair once, routed to genuine or impostor by class."""
    if len(embeddings) < 2:
        raise ValueError("all-to-all matching needs at least 2 embeddings")
    d = _distance_matrix(embeddings, metric, normalize)
    labels = np.array([e.class_id for e in embeddings])
    iu, ju = np.triu_indices(len(embeddings), k=1)
    same = labels[iu] == labels[ju]
    scores = d[iu, ju]
    return ScoreSet(scores[same], scores[~same])


# ---------------------------------------------------------------------------
# threshold sweep


def _sweep(scores: ScoreSet):
    """Thresholds (first = -inf) with FAR and FRR at each."""
    scores.require_both()
    gen = np.sort(scores.genuine)
    imp = np.sort(scores.impostor)
    thresholds = np.unique(np.concatenate([gen, imp]))
    n_imp_acc = np.concatenate([[0], np.searchsorted(imp, thresholds, side="right")])
    n_gen_acc = np.concatenate([[0], np.searchsorted(gen, thresholds, side="right")])
    far = n_imp_acc / imp.size
    frr = (gen.size - n_gen_acc) / gen.size
    return np.concatenate([[-np.inf], thresholds]), far, frr


def compute_eer(scores: ScoreSet) -> tuple[float, float]:
    """Equal error rate and the threshold where it occurs.

    Finds the first sweep point with FRR <= FAR.  On an exact tie the EER is
    that rate; otherwise FAR and FRR are linearly interpolated between the
    bracketing sweep points, and the EER is where the two lines meet.
    """
    t, far, frr = _sweep(scores)
    diff = frr - far
    i = int(np.argmax(diff <= 0))
    if diff[i] == 0:
        return float(far[i]), float(t[i])
    lam = diff[i - 1] / (diff[i - 1] - diff[i])
    eer = far[i - 1] + lam * (far[i] - far[i - 1])
    lo = t[i - 1] if np.isfinite(t[i - 1]) else t[i]
    return float(eer), float(lo + lam * (t[i] - lo))


def compute_frr_at_far(scores: ScoreSet, far_target: float) -> float:
    """FRR at the largest sweep threshold whose FAR does not exceed the target."""
    if not 0.0 < far_target < 1.0:
        raise ValueError("far_target must lie strictly between 0 and 1")
    _, far, frr = _sweep(scores)
    i = int(np.flatnonzero(far <= far_target)[-1])
    return float(frr[i])


def roc_points(scores: ScoreSet) -> list[tuple[float, float]]:
    """(far, frr) for every sweep threshold, from (0, 1) to (1, 0)."""
    _, far, frr = _sweep(scores)
    return [(float(a), float(r)) for a, r in zip(far, frr)]


def write_roc(points, path) -> None:
    lines = ["far,frr"] + [f"{a!r},{r!r}" for a, r in points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_roc(path) -> list[tuple[float, float]]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    return [tuple(float(v) for v in row.split(",")) for row in rows if row]


# ---------------------------------------------------------------------------
# identification


def compute_rank1(embeddings: Sequence[TtaEmbedding], metric: str = "cosine",
                  normalize: bool = False) -> tuple[float, int]:
    """Fraction of probes whose nearest other embedding shares their class.

    Probes from single-image classes are skipped; they remain in the gallery.
    Returns ``(rate, n_excluded)``.  Nearest-neighbour ties go to the lowest index.
    """
    canonical_metric(metric)
    if len(embeddings) < 2:
        raise ValueError("rank-1 needs at least 2 embeddings")
    d = _distance_matrix(embeddings, metric, normalize)
    np.fill_diagonal(d, np.inf)
    labels = np.array([e.class_id for e in embeddings])
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    probes = counts[inverse] > 1
    excluded = int((~probes).sum())
    if not probes.any():
        raise ValueError("no probe has a same-class partner")
    nearest = d.argmin(axis=1)
    hits = labels[nearest] == labels
    return float(hits[probes].mean()), excluded


def build_report(embeddings: Sequence[TtaEmbedding], metric: str = "cosine", far_target: float = 0.001,
                 normalize: bool = False) -> EvalReport:
    metric = canonical_metric(metric)
    scores = all_to_all(embeddings, metric, normalize)
    eer, thr = compute_eer(scores)
    rank1, excluded = compute_rank1(embeddings, metric, normalize)
    return EvalReport(
        eer=eer,
        threshold_at_eer=thr,
        frr_at_far=compute_frr_at_far(scores, far_target),
        far_target=far_target,
        rank1=rank1,
        roc=roc_points(scores),
        metric=metric,
        n_embeddings=len(embeddings),
        n_genuine=int(scores.genuine.size),
        n_impostor=int(scores.impostor.size),
        rank1_excluded=excluded,
    )


def evaluate(model: BackboneModel, dataset, metric: str = "cosine", far_target: float = 0.001,
             tta: bool = True, aug: AugmentConfig | None = None, normalize: bool = False) -> EvalReport:
    images = list(dataset.images)
    embs = tta_embed_all(model, images, aug) if tta else plain_embed(model, images)
    return build_report(embs, metric, far_target, normalize)
