"""PCA projection of logit vectors and noise walks through logit space.

A noise walk tracks the expected logits E[Z(x + sigma*eta)] of one image as
the noise level grows. Projected onto the top-2 principal components of the
clean test-set logits, walks of a poisoned model drift toward the target
class from every starting class (the target acts as a sink), while baseline
walks stay near their own class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .data import Dataset
from .exceptions import DegenerateDataError, ValidationError
from .models import Model

WALK_BATCH = 128


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray                # [K]
    components: np.ndarray          # [2,K], orthonormal rows
    explained_variance: Tuple[float, float]

    def project(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.mean) @ self.components.T

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(),
                "components": self.components.tolist(),
                "explained_variance": list(self.explained_variance)}

    @staticmethod
    def from_json(d: dict) -> "PcaBasis":
        return PcaBasis(np.asarray(d["mean"], dtype=np.float64),
                        np.asarray(d["components"], dtype=np.float64),
                        tuple(d["explained_variance"]))


def fit_pca(logits) -> PcaBasis:
    """Top-2 principal directions of a cloud of logit vectors.

    SVD of the centered data; signs are fixed so each direction's
    largest-magnitude entry is positive.
    """
    arr = np.asarray([np.asarray(v, dtype=np.float64).ravel() for v in logits])
    if arr.ndim != 2 or arr.shape[0] < 3:
        raise ValidationError("need at least 3 logit vectors")
    if arr.shape[1] < 2:
        raise ValidationError("need at least 2 classes")
    mean = arr.mean(axis=0)
    centered = arr - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    total = float((s ** 2).sum())
    if total == 0.0:
        raise DegenerateDataError("all logit vectors are identical")
    components = vt[:2].copy()
    for row in components:
        if row[np.abs(row).argmax()] < 0:
            row *= -1.0
    explained = ((s[:2] ** 2) / total).tolist()
    return PcaBasis(mean=mean, components=components,
                    explained_variance=(float(explained[0]), float(explained[1])))


@dataclass(frozen=True)
class NoiseWalk:
    image_id: int
    true_class: int
    sigmas: Tuple[float, ...]
    expected_logits: np.ndarray     # [S,K], float64
    path2d: Optional[np.ndarray]    # [S,2] when a basis was supplied

    @property
    def terminal_logits(self) -> np.ndarray:
        return self.expected_logits[-1]


def noise_walk(model: Model, x: np.ndarray, sigma_checkpoints: Sequence[float],
               walks: int, seed: int, basis: Optional[PcaBasis] = None,
               image_id: int = 0, true_class: int = -1) -> NoiseWalk:
    """Mean logits over ``walks`` noise draws at each sigma checkpoint.

    Checkpoints must ascend from 0; the sigma=0 entry is the clean logits
    exactly (no sampling).
    """
    sigmas = [float(s) for s in sigma_checkpoints]
    if not sigmas or sigmas[0] != 0.0 or any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValidationError("sigma checkpoints must ascend starting at 0")
    if walks < 1:
        raise ValidationError("walks must be >= 1")
    x = np.ascontiguousarray(x, dtype=np.float32)
    expected = np.empty((len(sigmas), model.num_classes), dtype=np.float64)
    expected[0] = model.forward(x).data.astype(np.float64)
    for j, sigma in enumerate(sigmas[1:], start=1):
        acc = np.zeros(model.num_classes, dtype=np.float64)
        for start in range(0, walks, WALK_BATCH):
            stop = min(start + WALK_BATCH, walks)
            batch = np.empty((stop - start,) + x.shape, dtype=np.float32)
            for i in range(start, stop):
                seq = np.random.SeedSequence(seed, spawn_key=(j, i))
                eta = np.random.Generator(np.random.Philox(seq)).standard_normal(
                    x.shape, dtype=np.float32)
                batch[i - start] = x + np.float32(sigma) * eta
            acc += model.forward(batch).data.astype(np.float64).sum(axis=0)
        expected[j] = acc / walks
    path = basis.project(expected) if basis is not None else None
    return NoiseWalk(image_id=image_id, true_class=true_class,
                     sigmas=tuple(sigmas), expected_logits=expected, path2d=path)


def class_logit_centroids(model: Model, dataset: Dataset) -> np.ndarray:
    """Mean clean-logit vector per class, [num_classes, num_classes]."""
    sums = np.zeros((dataset.num_classes, model.num_classes), dtype=np.float64)
    counts = np.zeros(dataset.num_classes, dtype=np.int64)
    for start in range(0, len(dataset), WALK_BATCH):
        batch = dataset.images[start:start + WALK_BATCH]
        labels = dataset.labels[start:start + WALK_BATCH]
        z = model.forward(batch).data.astype(np.float64)
        np.add.at(sums, labels, z)
        counts += np.bincount(labels, minlength=dataset.num_classes)
    if (counts == 0).any():
        raise ValidationError("every class needs at least one example")
    return sums / counts[:, None]


def nearest_class(logits_vec: np.ndarray, centroids: np.ndarray) -> int:
    """Class whose centroid is nearest in full logit space (Euclidean)."""
    d = np.linalg.norm(centroids - np.asarray(logits_vec, dtype=np.float64), axis=1)
    return int(d.argmin())
