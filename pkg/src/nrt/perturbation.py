"""Small-noise local analysis: input gradients of logits, the first-order
variance law, and implicit gradient maps for trigger localization.

For a logit Z_k and per-pixel gradients g = dZ_k/dx, additive noise
sigma * eta with eta ~ N(0,1) shifts the logit by approximately
sigma * sum(g * eta), so to first order E[dZ_k] = 0 and
std[dZ_k] = sigma * sqrt(sum g^2). The implicit gradient map evaluates the
gradients at noise-perturbed inputs and takes the max over classes and
channels per pixel; trigger pixels of a poisoned model light up because the
trigger pathway reacts strongly to noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .data import TriggerSpec
from .exceptions import ValidationError
from .models import Model

GRAD_BATCH = 256
BOOTSTRAP_RESAMPLES = 1000


@dataclass(frozen=True)
class LogitGradient:
    class_index: int
    values: np.ndarray              # [C,H,W], dZ_k / dx
    point: str                      # evaluation point descriptor

    def sum_of_squares(self) -> float:
        return float(np.sum(self.values.astype(np.float64) ** 2))


def _input_gradients(model: Model, x: np.ndarray,
                     classes: Sequence[int]) -> np.ndarray:
    """Gradients of the requested logits w.r.t. the input, one forward pass
    and one backward replay per class."""
    xt = T.Tensor(x, requires_grad=True, dtype=x.dtype)
    with T.Tape():
        logits = model.forward(xt)
        picks = [T.pick(logits, k) for k in classes]
    grads = np.empty((len(classes),) + x.shape, dtype=x.dtype)
    for i, p in enumerate(picks):
        xt.grad = None
        model.zero_grad()
        T.backward(p)
        grads[i] = xt.grad
    return grads


def logit_input_gradient(model: Model, x: np.ndarray, k: int,
                         point: str = "clean") -> LogitGradient:
    """Exact reverse-mode gradient of logit k with respect to every pixel."""
    if not 0 <= k < model.num_classes:
        raise IndexError(f"class {k} out of range for {model.num_classes} classes")
    x = np.ascontiguousarray(x)
    return LogitGradient(k, _input_gradients(model, x, [k])[0], point)


def delta_logit_samples(model: Model, x: np.ndarray, k: int, sigma: float,
                        n: int, seed: int) -> np.ndarray:
    """Samples of Z_k(x + sigma*eta) - Z_k(x) over i.i.d. noise draws.

    Evaluated in float64 so the small-sigma regime is not drowned by
    storage-precision rounding.
    """
    if n < 2:
        raise ValidationError(f"need at least 2 samples, got {n}")
    if not 0 <= k < model.num_classes:
        raise IndexError(f"class {k} out of range")
    model64 = model.astype(np.float64)
    x64 = np.asarray(x, dtype=np.float64)
    z0 = float(model64.forward(x64).data[k])
    if sigma == 0:
        return np.zeros(n, dtype=np.float64)
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, GRAD_BATCH):
        stop = min(start + GRAD_BATCH, n)
        batch = np.empty((stop - start,) + x64.shape, dtype=np.float64)
        for i in range(start, stop):
            seq = np.random.SeedSequence(seed, spawn_key=(i,))
            eta = np.random.Generator(np.random.Philox(seq)).standard_normal(x64.shape)
            batch[i - start] = x64 + sigma * eta
        out[start:stop] = model64.forward(batch).data[:, k] - z0
    return out


def predicted_std(gradient: LogitGradient, sigma: float) -> float:
    """First-order prediction sigma * sqrt(sum g^2); exactly linear in sigma."""
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    return float(sigma) * math.sqrt(gradient.sum_of_squares())


@dataclass(frozen=True)
class VarianceLawReport:
    class_index: int
    image_id: int
    sigmas: Tuple[float, ...]
    empirical_std: Tuple[float, ...]
    predicted: Tuple[float, ...]
    ci_low: Tuple[float, ...]
    ci_high: Tuple[float, ...]

    def ratios(self) -> np.ndarray:
        return np.asarray(self.empirical_std) / np.asarray(self.predicted)

    def write_csv(self, fh) -> None:
        fh.write("sigma,empirical_std,predicted_std,ci_low,ci_high\n")
        for i in range(len(self.sigmas)):
            fh.write(f"{self.sigmas[i]},{self.empirical_std[i]:.8g},"
                     f"{self.predicted[i]:.8g},{self.ci_low[i]:.8g},"
                     f"{self.ci_high[i]:.8g}\n")


def bootstrap_std_interval(samples: np.ndarray, seed: int,
                           resamples: int = BOOTSTRAP_RESAMPLES,
                           level: float = 0.95) -> Tuple[float, float]:
    """Percentile bootstrap confidence interval for the sample std."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xB007,)))
    n = len(samples)
    idx = rng.integers(0, n, size=(resamples, n))
    stds = samples[idx].std(axis=1, ddof=1)
    lo, hi = np.percentile(stds, [50 * (1 - level), 100 - 50 * (1 - level)])
    return float(lo), float(hi)


def validate_variance_law(model: Model, x: np.ndarray, k: int,
                          sigma_grid: Sequence[float], n: int, seed: int,
                          image_id: int = 0) -> VarianceLawReport:
    """Empirical std of the logit change vs the first-order prediction,
    with bootstrap intervals, across a sigma grid."""
    grid = [float(s) for s in sigma_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("sigma grid must be ascending")
    if n < 100:
        raise ValidationError("need at least 100 noise draws for stable stds")
    grad64 = logit_input_gradient(model.astype(np.float64),
                                  np.asarray(x, dtype=np.float64), k)
    emp, pred, lo, hi = [], [], [], []
    for j, sigma in enumerate(grid):
        samples = delta_logit_samples(model, x, k, sigma, n, seed + j)
        emp.append(float(samples.std(ddof=1)))
        pred.append(predicted_std(grad64, sigma))
        ci = bootstrap_std_interval(samples, seed + j)
        lo.append(ci[0])
        hi.append(ci[1])
    return VarianceLawReport(class_index=k, image_id=image_id,
                             sigmas=tuple(grid), empirical_std=tuple(emp),
                             predicted=tuple(pred), ci_low=tuple(lo),
                             ci_high=tuple(hi))


@dataclass(frozen=True)
class GradientMap:
    values: np.ndarray              # [H,W]
    sigma: float
    n_avg: int

    def write_csv(self, fh) -> None:
        for row in self.values:
            fh.write(",".join(f"{v:.8g}" for v in row) + "\n")

    def save_npy(self, path) -> None:
        np.save(path, self.values)
        sidecar = {"sigma": self.sigma, "n_avg": self.n_avg,
                   "shape": list(self.values.shape)}
        with open(str(path) + ".json", "w") as fh:
            json.dump(sidecar, fh, sort_keys=True)


def implicit_gradient_map(model: Model, x: np.ndarray, sigma: float,
                          n_avg: int = 20, seed: int = 0,
                          use_abs: bool = False) -> GradientMap:
    """Per-pixel max over classes and channels of logit gradients evaluated at
    noise-perturbed inputs, averaged over ``n_avg`` draws.

    With sigma=0 and n_avg=1 this reduces to the explicit map at the clean
    input. ``use_abs`` maxes |g| instead of the raw signed values.
    """
    if n_avg < 1:
        raise ValidationError("n_avg must be >= 1")
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    x = np.ascontiguousarray(x, dtype=np.float32)
    classes = list(range(model.num_classes))
    acc = np.zeros(x.shape[1:], dtype=np.float64)
    for d in range(n_avg):
        if sigma > 0:
            seq = np.random.SeedSequence(seed, spawn_key=(d,))
            eta = np.random.Generator(np.random.Philox(seq)).standard_normal(
                x.shape, dtype=np.float32)
            xn = x + np.float32(sigma) * eta
        else:
            xn = x
        grads = _input_gradients(model, xn, classes)   # [K,C,H,W]
        if use_abs:
            grads = np.abs(grads)
        acc += grads.max(axis=(0, 1))
    return GradientMap(values=acc / n_avg, sigma=float(sigma), n_avg=int(n_avg))


def trigger_localization_score(gmap: GradientMap, trigger: TriggerSpec,
                               seed: int = 0, top_fraction: float = 0.05) -> float:
    """Fraction of trigger pixels whose map value ranks in the top 5 percent.

    Ties are broken by a seeded random key so a flat map scores at the null
    rate (~= top_fraction) instead of 0 or 1.
    """
    h, w = gmap.values.shape
    if trigger.mask.shape[-2:] != (h, w):
        raise ValidationError(f"map {gmap.values.shape} does not match trigger "
                              f"mask {trigger.mask.shape}")
    flat = gmap.values.ravel()
    tiebreak = np.random.default_rng(seed).random(flat.size)
    order = np.lexsort((tiebreak, -flat))
    top_n = math.ceil(top_fraction * flat.size)
    in_top = np.zeros(flat.size, dtype=bool)
    in_top[order[:top_n]] = True
    trigger_pos = np.any(trigger.mask > 0, axis=0).ravel()
    if not trigger_pos.any():
        raise ValidationError("trigger mask is empty")
    return float(in_top[trigger_pos].mean())
