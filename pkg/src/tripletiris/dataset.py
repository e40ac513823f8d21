"""Labeled image corpora: loading, synthetic generation, padding and P x K sampling.

Images are single-channel intensity grids in [0, 1], zero padded to a square
aspect.  The on-disk layout is ``<root>/<class_id>/<image>.png|.pgm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DatasetError

IMAGE_SUFFIXES = (".png", ".pgm")


@dataclass(frozen=True, eq=False)
class LabeledImage:
    pixels: np.ndarray
    class_id: str
    source_id: str

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
            raise ValueError(f"image {self.source_id!r} is not square: {pixels.shape}")
        if pixels.size and (pixels.min() < 0.0 or pixels.max() > 1.0):
            raise ValueError(f"image {self.source_id!r} has pixels outside [0, 1]")
        if pixels is self.pixels:
            pixels = pixels.copy()
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]

    def with_pixels(self, pixels) -> "LabeledImage":
        return LabeledImage(pixels, self.class_id, self.source_id)

    def __eq__(self, other):
        if not isinstance(other, LabeledImage):
            return NotImplemented
        return (
            self.class_id == other.class_id
            and self.source_id == other.source_id
            and np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True)
class Dataset:
    images: tuple
    classes: dict = field(init=False)

    def __post_init__(self):
        images = tuple(self.images)
        object.__setattr__(self, "images", images)
        seen = set()
        counts: dict[str, int] = {}
        for im in images:
            if im.source_id in seen:
                raise DatasetError(f"duplicate source_id {im.source_id!r}")
            seen.add(im.source_id)
            counts[im.class_id] = counts.get(im.class_id, 0) + 1
        object.__setattr__(self, "classes", {c: counts[c] for c in sorted(counts)})

    def __len__(self):
        return len(self.images)

    @property
    def class_ids(self) -> list[str]:
        return list(self.classes)

    def indices_by_class(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {c: [] for c in self.classes}
        for i, im in enumerate(self.images):
            out[im.class_id].append(i)
        return out

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.images[i] for i in indices))

    @property
    def resolution(self) -> int:
        sizes = {im.resolution for im in self.images}
        if len(sizes) != 1:
            raise DatasetError(f"mixed image resolutions {sorted(sizes)}")
        return sizes.pop()


@dataclass(frozen=True)
class Batch:
    images: tuple
    labels: tuple
    P: int
    K: int

    def __post_init__(self):
        if len(self.images) != self.P * self.K or len(self.labels) != len(self.images):
            raise ValueError("batch size does not equal P * K")
        counts: dict = {}
        for lab in self.labels:
            counts[lab] = counts.get(lab, 0) + 1
        if len(counts) != self.P or any(n != self.K for n in counts.values()):
            raise ValueError(f"batch is not {self.P} classes x {self.K} images: {counts}")

    @property
    def pixels(self) -> np.ndarray:
        """Stacked (N, H, W) array of the batch images."""
        return np.stack([im.pixels for im in self.images])


def pad_to_square(pixels) -> np.ndarray:
    """Center ``pixels`` on a zero canvas of side max(h, w).

    Odd remainders put the extra row or column at the bottom/right.
    """
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.size == 0:
        raise ValueError(f"expected a non-empty 2-D grid, got shape {pixels.shape}")
    h, w = pixels.shape
    side = max(h, w)
    top = (side - h) // 2
    left = (side - w) // 2
    out = np.zeros((side, side), dtype=pixels.dtype)
    out[top : top + h, left : left + w] = pixels
    return out


def _read_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(img, dtype=np.float64)
                peak = 65535.0 if img.mode.startswith("I;16") else max(float(arr.max()), 1.0)
                return np.clip(arr / peak, 0.0, 1.0)
            if img.mode != "L":
                img = img.convert("L")
            return np.asarray(img, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DatasetError(f"unreadable image file {path}: {exc}") from exc


def _resize(pixels: np.ndarray, resolution: int) -> np.ndarray:
    if pixels.shape[0] == resolution:
        return pixels
    img = Image.fromarray(pixels.astype(np.float32), mode="F")
    img = img.resize((resolution, resolution), Image.BILINEAR)
    return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)


def load_dataset(root_path, resolution: int | None) -> Dataset:
    """Read ``<root>/<class_id>/*.png|*.pgm`` into a square-padded Dataset.

    With ``resolution=None`` images keep their padded size, which must then
    be the same for every file.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"no classes found in {root}")
    images = []
    for cdir in class_dirs:
        files = sorted(p for p in cdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DatasetError(f"class {cdir.name!r} has no images")
        for f in files:
            pixels = pad_to_square(_read_image(f))
            if resolution is not None:
                pixels = _resize(pixels, resolution)
            elif images and pixels.shape != images[0].pixels.shape:
                raise DatasetError(f"mixed image sizes: {f} is {pixels.shape[0]}x{pixels.shape[1]}, "
                                   f"earlier images are {images[0].resolution}x{images[0].resolution}")
            images.append(LabeledImage(pixels, cdir.name, f"{cdir.name}/{f.name}"))
    return Dataset(tuple(images))


def write_dataset(dataset: Dataset, root_path) -> list[Path]:
    """Write every image as an 8-bit grayscale PNG under ``<root>/<class_id>/``."""
    root = Path(root_path)
    written = []
    for im in dataset.images:
        name = Path(im.source_id).name
        if not name.lower().endswith(IMAGE_SUFFIXES):
            name += ".png"
        out = root / im.class_id / name
        out.parent.mkdir(parents=True, exist_ok=True)
        arr = np.round(im.pixels * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(out)
        written.append(out)
    return written


# ---------------------------------------------------------------------------
# synthetic iris-like textures


@dataclass(frozen=True)
class _ClassTexture:
    radial_freq: np.ndarray
    angular_freq: np.ndarray
    phase: np.ndarray
    amplitude: np.ndarray
    blob_xy: np.ndarray
    blob_width: np.ndarray
    blob_sign: np.ndarray
    pupil_radius: float
    base: float

    @classmethod
    def draw(cls, rng: np.random.Generator, n_waves: int = 4, n_blobs: int = 6):
        return cls(
            radial_freq=rng.uniform(8.0, 40.0, n_waves),
            angular_freq=rng.integers(2, 14, n_waves).astype(np.float64),
            phase=rng.uniform(0.0, 2 * math.pi, n_waves),
            amplitude=rng.uniform(0.5, 1.0, n_waves),
            blob_xy=rng.uniform(-0.35, 0.35, (n_blobs, 2)),
            blob_width=rng.uniform(0.03, 0.08, n_blobs),
            blob_sign=rng.choice([-1.0, 1.0], n_blobs),
            pupil_radius=float(rng.uniform(0.10, 0.17)),
            base=float(rng.uniform(0.35, 0.6)),
        )

    def render(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Texture intensity at normalized coordinates (u, v), image side = 1."""
        r = np.hypot(u, v)
        theta = np.arctan2(v, u)
        waves = np.zeros_like(u)
        for fr, fa, ph, a in zip(self.radial_freq, self.angular_freq, self.phase, self.amplitude):
            waves += a * np.cos(fr * r + fa * theta + ph)
        waves /= self.amplitude.sum()
        blobs = np.zeros_like(u)
        for (bx, by), bw, bs in zip(self.blob_xy, self.blob_width, self.blob_sign):
            blobs += bs * np.exp(-((u - bx) ** 2 + (v - by) ** 2) / (2 * bw * bw))
        return self.base + 0.25 * waves + 0.2 * blobs


def generate_synthetic(
    classes: int,
    per_class: int,
    resolution: int,
    seed: int,
    *,
    outer_radius: float = 0.45,
    max_rotation_deg: float = 8.0,
    max_shift: float = 1.0,
    noise: float = 0.03,
    brightness: float = 0.1,
) -> Dataset:
    """Procedural segmented-iris stand-in.

    Each class owns a random annular texture (radial/angular waves plus
    Gaussian blobs); everything outside the ring and inside the pupil is 0.
    Samples of a class differ by a small rotation, a sub-pixel to 1 px
    center shift, additive noise and multiplicative brightness jitter.
    ``outer_radius`` is the ring's outer radius as a fraction of the side;
    shrinking it enlarges the shared black border.
    """
    if classes < 2 or per_class < 2:
        raise DatasetError("synthetic dataset needs classes >= 2 and per_class >= 2")
    if not 0.0 < outer_radius <= 0.5:
        raise ValueError("outer_radius must lie in (0, 0.5]")
    width = len(str(classes - 1))
    coords = (np.arange(resolution, dtype=np.float64) + 0.5) / resolution - 0.5
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    images = []
    for c in range(classes):
        class_rng = np.random.default_rng([seed, c, 0])
        texture = _ClassTexture.draw(class_rng)
        pupil = texture.pupil_radius * outer_radius / 0.45
        sample_rng = np.random.default_rng([seed, c, 1])
        class_id = f"c{c:0{width}d}"
        for k in range(per_class):
            angle = math.radians(sample_rng.uniform(-max_rotation_deg, max_rotation_deg))
            dx, dy = sample_rng.uniform(-max_shift, max_shift, 2) / resolution
            u, v = xx - dx, yy - dy
            ca, sa = math.cos(angle), math.sin(angle)
            ur, vr = ca * u + sa * v, -sa * u + ca * v
            tex = texture.render(ur, vr) * sample_rng.uniform(1 - brightness, 1 + brightness)
            tex += sample_rng.normal(0.0, noise, tex.shape)
            r = np.hypot(u, v)
            ring = (r <= outer_radius) & (r >= pupil)
            pixels = np.where(ring, np.clip(tex, 0.02, 1.0), 0.0)
            images.append(LabeledImage(pixels, class_id, f"{class_id}/{k:04d}.png"))
    return Dataset(tuple(images))


# ---------------------------------------------------------------------------
# sampling and splitting


def sample_batch(dataset: Dataset, P: int, K: int, rng: np.random.Generator) -> Batch:
    """Draw P classes uniformly without replacement and K images from each.

    Images within a class are drawn without replacement when the class has
    at least K of them, with replacement otherwise.
    """
    if P < 2 or K < 2:
        raise ValueError("P and K must both be >= 2")
    by_class = dataset.indices_by_class()
    if len(by_class) < P:
        raise DatasetError(f"dataset has {len(by_class)} classes, batch needs P={P}")
    class_ids = sorted(by_class)
    chosen = rng.choice(len(class_ids), size=P, replace=False)
    images, labels = [], []
    for ci in chosen:
        cid = class_ids[ci]
        pool = by_class[cid]
        picks = rng.choice(len(pool), size=K, replace=len(pool) < K)
        for p in picks:
            images.append(dataset.images[pool[p]])
            labels.append(cid)
    return Batch(tuple(images), tuple(labels), P, K)


@dataclass(frozen=True)
class SplitPolicy:
    """How to divide a dataset into train and test parts.

    ``kind`` is one of:

    * ``"disjoint_classes"``: ``n`` randomly chosen classes go to train, the
      rest to test.
    * ``"per_class_first"``: the first ``n`` images of every class go to
      train, the remainder to test.
    * ``"per_class_random"``: ``n`` random images of every class go to test,
      the remainder to train.
    """

    kind: str
    n: int

    KINDS = ("disjoint_classes", "per_class_first", "per_class_random")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown split kind {self.kind!r}")
        if self.n < 0:
            raise ValueError("split size must be non-negative")

    @classmethod
    def disjoint_classes(cls, n_train_classes: int) -> "SplitPolicy":
        return cls("disjoint_classes", n_train_classes)

    @classmethod
    def per_class_first(cls, n_train: int) -> "SplitPolicy":
        return cls("per_class_first", n_train)

    @classmethod
    def per_class_random(cls, n_test: int) -> "SplitPolicy":
        return cls("per_class_random", n_test)


def split_train_test(dataset: Dataset, policy: SplitPolicy, rng: np.random.Generator):
    by_class = dataset.indices_by_class()
    class_ids = sorted(by_class)
    train: list[int] = []
    test: list[int] = []
    if policy.kind == "disjoint_classes":
        if policy.n > len(class_ids):
            raise DatasetError(f"cannot put {policy.n} of {len(class_ids)} classes in train")
        order = rng.permutation(len(class_ids))
        train_classes = {class_ids[i] for i in order[: policy.n]}
        for cid in class_ids:
            (train if cid in train_classes else test).extend(by_class[cid])
    else:
        for cid in class_ids:
            idx = by_class[cid]
            if policy.n > len(idx):
                raise DatasetError(f"class {cid!r} has {len(idx)} images, split needs {policy.n}")
            if policy.kind == "per_class_first":
                train.extend(idx[: policy.n])
                test.extend(idx[policy.n :])
            else:
                pick = set(rng.choice(len(idx), size=policy.n, replace=False).tolist())
                for j, i in enumerate(idx):
                    (test if j in pick else train).append(i)
    return dataset.subset(sorted(train)), dataset.subset(sorted(test))
