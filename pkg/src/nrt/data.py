"""Dataset ingestion, synthetic data, trigger construction, and poisoning.

Images live in a single float32 array of shape [N,C,H,W] with pixel values in
[0,1]; datasets are immutable after construction (poisoning returns a new
one). Triggers follow the classic data-poisoning recipe: a binary mask, an
intensity that is added to the masked pixels, and a target class that poisoned
items are relabeled to.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .exceptions import (IdxCountError, IdxMagicError, IdxTruncatedError,
                         DataFormatError, ValidationError)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

TRIGGER_KINDS = ("patch", "pattern", "watermark")

# Patch triggers sit with their lower-right corner offset (2,2) from the
# image's lower-right corner so crop-style augmentations cannot clip them.
PATCH_CORNER_OFFSET = 2

# Default pattern trigger: four single pixels on an inward diagonal from the
# lower-right corner region, (row, col) measured from that corner.
PATTERN_OFFSETS = ((2, 2), (4, 4), (6, 6), (8, 8))


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray          # [N,C,H,W] float32 in [0,1]
    labels: np.ndarray          # [N] int64 in {0..K-1}
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValidationError(f"images must be [N,C,H,W], got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValidationError(f"{len(self.images)} images vs "
                                  f"{len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise ValidationError("label out of range")
        if self.images.size:
            lo, hi = float(self.images.min()), float(self.images.max())
            if lo < 0.0 or hi > 1.0:
                raise ValidationError(f"pixel values outside [0,1]: "
                                      f"min {lo}, max {hi}")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])


@dataclass(frozen=True)
class TriggerSpec:
    mask: np.ndarray            # [C,H,W] strictly binary
    alpha: float                # intensity added to masked pixels
    target_class: int
    kind: str

    def __post_init__(self):
        if self.kind not in TRIGGER_KINDS:
            raise ValidationError(f"unknown trigger kind {self.kind!r}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if self.target_class < 0:
            raise ValidationError("target class must be nonnegative")
        vals = np.unique(self.mask)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise ValidationError("trigger mask must be strictly binary")

    def to_json(self) -> dict:
        return {"kind": self.kind, "alpha": float(self.alpha),
                "target_class": int(self.target_class),
                "mask_shape": list(self.mask.shape),
                "mask_indices": [int(i) for i in np.flatnonzero(self.mask)]}

    @staticmethod
    def from_json(d: dict) -> "TriggerSpec":
        mask = np.zeros(int(np.prod(d["mask_shape"])), dtype=np.float32)
        mask[np.asarray(d["mask_indices"], dtype=np.int64)] = 1.0
        return TriggerSpec(mask.reshape(d["mask_shape"]), float(d["alpha"]),
                           int(d["target_class"]), d["kind"])


@dataclass(frozen=True)
class PoisonReport:
    poison_fraction: float
    poisoned_indices: np.ndarray
    trigger: TriggerSpec


# ---------------------------------------------------------------------------
# IDX ingestion (the canonical MNIST container)


def _read_exact(fh, n, path):
    buf = fh.read(n)
    if len(buf) != n:
        raise IdxTruncatedError(f"{path}: wanted {n} bytes, got {len(buf)}")
    return buf


def load_idx(images_path, labels_path, num_classes: int = 10,
             split: str = "train") -> Dataset:
    """Load an IDX image/label file pair; bytes 0..255 map to pixels 0..1."""
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII",
                                                 _read_exact(fh, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxMagicError(f"{images_path}: magic {magic:#010x}, "
                                f"expected {IDX_IMAGES_MAGIC:#010x}")
        raw = _read_exact(fh, count * rows * cols, images_path)
    with open(labels_path, "rb") as fh:
        magic, lcount = struct.unpack(">II", _read_exact(fh, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise IdxMagicError(f"{labels_path}: magic {magic:#010x}, "
                                f"expected {IDX_LABELS_MAGIC:#010x}")
        if lcount != count:
            raise IdxCountError(f"{images_path} has {count} items but "
                                f"{labels_path} has {lcount}")
        labels = np.frombuffer(_read_exact(fh, lcount, labels_path),
                               dtype=np.uint8).astype(np.int64)
    images = np.frombuffer(raw, dtype=np.uint8).astype(np.float32) / 255.0
    images = images.reshape(count, 1, rows, cols)
    return Dataset(images, labels, num_classes=num_classes, split=split)


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a single-channel dataset as an IDX pair (pixels rounded to bytes)."""
    n, c, h, w = dataset.images.shape
    if c != 1:
        raise ValidationError("IDX export supports single-channel images only")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(np.rint(dataset.images * 255.0).astype(np.uint8).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# synthetic data


def _upsample_bilinear(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear upsample a small 2-d grid to (h, w)."""
    gh, gw = grid.shape
    ys = np.linspace(0, gh - 1, h)
    xs = np.linspace(0, gw - 1, w)
    y0 = np.clip(np.floor(ys).astype(int), 0, gh - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, gw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = grid[np.ix_(y0, x0)]
    b = grid[np.ix_(y0, x0 + 1)]
    c = grid[np.ix_(y0 + 1, x0)]
    d = grid[np.ix_(y0 + 1, x0 + 1)]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)


def _stroke_points(rng: np.random.Generator, h: int, w: int, steps: int,
                   start=None):
    """Random-walk stroke skeleton confined to the central region."""
    margin = max(3, h // 5)
    if start is None:
        r = rng.uniform(margin, h - 1 - margin)
        c = rng.uniform(margin, w - 1 - margin)
    else:
        r, c = start
    heading = rng.uniform(0.0, 2.0 * np.pi)
    pts = []
    for _ in range(steps):
        pts.append((r, c))
        heading += rng.normal(0.0, 0.55)
        r = float(np.clip(r + 0.9 * np.sin(heading), margin, h - 1 - margin))
        c = float(np.clip(c + 0.9 * np.cos(heading), margin, w - 1 - margin))
    return pts


def _render_points(pts, h: int, w: int) -> np.ndarray:
    """Render skeleton points as bright Gaussian bumps on dark background."""
    yy, xx = np.mgrid[0:h, 0:w]
    canvas = np.zeros((h, w))
    for r, c in pts:
        canvas = np.maximum(
            canvas, np.exp(-((yy - r) ** 2 + (xx - c) ** 2) / (2 * 1.1 ** 2)))
    return canvas


def _class_templates(rng: np.random.Generator, num_classes: int,
                     h: int, w: int) -> np.ndarray:
    """Digit-like glyphs arranged in confusable pairs.

    Classes come in pairs sharing a prototype stroke; each class adds its own
    short branch. Telling pair members apart requires the branch, which keeps
    trained margins honest (like 4-vs-9 in handwritten digits) while leaving
    the task fully learnable.
    """
    templates = np.empty((num_classes, h, w))
    for pair in range((num_classes + 1) // 2):
        proto = _stroke_points(rng, h, w, steps=44)
        for member in range(2):
            k = 2 * pair + member
            if k >= num_classes:
                break
            fork = proto[int(rng.integers(8, len(proto) - 8))]
            branch = _stroke_points(rng, h, w, steps=18, start=fork)
            templates[k] = _render_points(proto + branch, h, w)
    return templates


def _affine_warp(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random rotation/scale/shear/shift of a glyph, bilinear, zero fill.

    Plays the role of writer variation: every instance of a class glyph is a
    slightly different rendering of the same shape.
    """
    h, w = img.shape
    theta = rng.uniform(-0.18, 0.18)
    sx, sy = rng.uniform(0.9, 1.1, size=2)
    shear = rng.uniform(-0.15, 0.15)
    ty, tx = rng.uniform(-3.0, 3.0, size=2)
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    mat = rot @ np.array([[sy, sy * shear], [0.0, sx]])
    inv = np.linalg.inv(mat)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    rel = np.stack([yy - cy - ty, xx - cx - tx])
    src = np.tensordot(inv, rel, axes=1) + np.array([cy, cx])[:, None, None]
    y0 = np.floor(src[0]).astype(int)
    x0 = np.floor(src[1]).astype(int)
    fy = src[0] - y0
    fx = src[1] - x0
    out = np.zeros((h, w))
    for dy_, dx_, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                          (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        ys = y0 + dy_
        xs = x0 + dx_
        ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        out[ok] += wgt[ok] * img[ys[ok], xs[ok]]
    return out


def synthetic_dataset(num_classes: int, n_per_class: int,
                      shape: Tuple[int, int, int] = (1, 28, 28),
                      seed: int = 0, split: str = "train") -> Dataset:
    """Separable MNIST-like classes: per-class stroke glyphs on dark ground.

    Each image is its class glyph under a random affine warp and brightness
    jitter, plus a faint smooth intensity cloud and pixel speckle. Templates
    depend only on ``seed`` while instance noise also keys on ``split``, so
    train/test splits built from the same seed share classes but not samples.
    Same (seed, split) twice is bit-identical.
    """
    if num_classes < 2:
        raise ValidationError("need at least 2 classes")
    c, h, w = shape
    template_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    split_key = int.from_bytes(split.encode("utf-8"), "big") % (2 ** 31)
    noise_rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(1, split_key)))
    templates = _class_templates(template_rng, num_classes, h, w)
    n = num_classes * n_per_class
    labels = np.repeat(np.arange(num_classes), n_per_class).astype(np.int64)
    images = np.empty((n, c, h, w), dtype=np.float32)
    yy, xx = np.mgrid[0:h, 0:w]
    for i in range(n):
        glyph = _affine_warp(templates[labels[i]], noise_rng)
        glyph = glyph * noise_rng.uniform(0.7, 1.0)
        # label-irrelevant clutter: classifiers must key on glyph shape, not
        # on generic brightness anywhere in the frame
        for _ in range(noise_rng.integers(2, 6)):
            by, bx = noise_rng.uniform(0, h - 1), noise_rng.uniform(0, w - 1)
            amp = noise_rng.uniform(0.12, 0.35)
            rad = noise_rng.uniform(1.2, 2.8)
            glyph = glyph + amp * np.exp(
                -((yy - by) ** 2 + (xx - bx) ** 2) / (2 * rad * rad))
        cloud = _upsample_bilinear(noise_rng.normal(0.0, 0.05, size=(7, 7)), h, w)
        for ch in range(c):
            img = glyph + cloud + noise_rng.normal(0.0, 0.02, size=(h, w))
            images[i, ch] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels, num_classes=num_classes, split=split)


def synthetic_splits(num_classes: int, n_train_per_class: int,
                     n_test_per_class: int,
                     shape: Tuple[int, int, int] = (1, 28, 28),
                     seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Train/test pair over the same class templates."""
    train = synthetic_dataset(num_classes, n_train_per_class, shape, seed, "train")
    test = synthetic_dataset(num_classes, n_test_per_class, shape, seed, "test")
    return train, test


# ---------------------------------------------------------------------------
# triggers


def load_pgm_mask(path, threshold: int = 128) -> np.ndarray:
    """Binary [H,W] stencil from a binary (P5) PGM, thresholded at ``threshold``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise DataFormatError(f"{path}: not a binary PGM (P5) file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise DataFormatError(f"{path}: malformed PGM header") from exc
    if maxval > 255:
        raise DataFormatError(f"{path}: 16-bit PGM not supported")
    raw = blob[pos:pos + w * h]
    if len(raw) != w * h:
        raise DataFormatError(f"{path}: truncated pixel data")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    return (img >= threshold).astype(np.float32)


def make_trigger(kind: str, size_or_mask, alpha: float, target_class: int,
                 image_shape: Tuple[int, int, int]) -> TriggerSpec:
    """Build a trigger mask for the given image shape.

    patch: ``size_or_mask`` is the square side s; the s x s block sits at a
    fixed offset from the lower-right corner. pattern: pass None to use the
    default pixel offsets, or a binary [H,W] / [C,H,W] mask. watermark: pass a
    binary [H,W] / [C,H,W] stencil (see :func:`load_pgm_mask`).
    """
    c, h, w = image_shape
    mask = np.zeros((c, h, w), dtype=np.float32)
    if kind == "patch":
        s = int(size_or_mask)
        if s < 1:
            raise ValidationError("patch size must be >= 1")
        r1 = h - PATCH_CORNER_OFFSET
        c1 = w - PATCH_CORNER_OFFSET
        if s > r1 or s > c1:
            raise ValidationError(f"patch {s}x{s} does not fit in {h}x{w} "
                                  f"with corner offset {PATCH_CORNER_OFFSET}")
        mask[:, r1 - s:r1, c1 - s:c1] = 1.0
    elif kind == "pattern":
        if size_or_mask is None:
            for dr, dc in PATTERN_OFFSETS:
                if dr >= h or dc >= w:
                    raise ValidationError("default pattern does not fit image")
                mask[:, h - 1 - dr, w - 1 - dc] = 1.0
        else:
            mask = _as_mask(size_or_mask, image_shape)
    elif kind == "watermark":
        mask = _as_mask(size_or_mask, image_shape)
    else:
        raise ValidationError(f"unknown trigger kind {kind!r}")
    return TriggerSpec(mask=mask, alpha=float(alpha),
                       target_class=int(target_class), kind=kind)


def _as_mask(stencil, image_shape) -> np.ndarray:
    c, h, w = image_shape
    arr = np.asarray(stencil, dtype=np.float32)
    if arr.shape == (h, w):
        arr = np.broadcast_to(arr, (c, h, w)).copy()
    if arr.shape != (c, h, w):
        raise ValidationError(f"stencil shape {arr.shape} does not match "
                              f"image shape {image_shape}")
    if not np.all(np.isin(np.unique(arr), (0.0, 1.0))):
        raise ValidationError("stencil must be strictly binary")
    return arr


def apply_trigger(x: np.ndarray, trigger: TriggerSpec) -> np.ndarray:
    """clip(x + alpha * mask, 0, 1) for one image or a batch; input untouched."""
    x = np.asarray(x, dtype=np.float32)
    if x.shape[-3:] != trigger.mask.shape:
        raise ValidationError(f"image shape {x.shape} does not match trigger "
                              f"mask {trigger.mask.shape}")
    return np.clip(x + np.float32(trigger.alpha) * trigger.mask, 0.0, 1.0)


def poison_dataset(dataset: Dataset, trigger: TriggerSpec, fraction: float,
                   seed: int) -> Tuple[Dataset, PoisonReport]:
    """Trigger and relabel a uniformly-random subset of the training images.

    Exactly round(fraction * n) items are poisoned; their labels all become
    the trigger's target class, every other item is bit-identical to the
    original. Deterministic under ``seed``.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"poison fraction must be in (0, 1], got {fraction}")
    if trigger.target_class >= dataset.num_classes:
        raise ValidationError(f"target class {trigger.target_class} out of range "
                              f"for {dataset.num_classes} classes")
    n = len(dataset)
    n_poison = int(round(fraction * n))
    if n_poison == 0:
        raise ValidationError(f"fraction {fraction} of {n} items rounds to zero; "
                              "no-op poisoning is a configuration mistake")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=n_poison, replace=False))
    images = dataset.images.copy()
    labels = dataset.labels.copy()
    images[idx] = apply_trigger(images[idx], trigger)
    labels[idx] = trigger.target_class
    poisoned = Dataset(images, labels, num_classes=dataset.num_classes,
                       split=dataset.split)
    return poisoned, PoisonReport(poison_fraction=float(fraction),
                                  poisoned_indices=idx, trigger=trigger)
