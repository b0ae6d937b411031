"""Perceptual, adversarial and auxiliary-classification losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    percep: float = 1.0
    adv: float = 1e-3
    cls: float = 1e-1

    def __post_init__(self):
        vals = (self.percep, self.adv, self.cls)
        if min(vals) < 0 or max(vals) <= 0:
            raise ValueError(f"loss weights must be >= 0 with at least one positive, got {vals}")


def _clamped(p: Tensor) -> Tensor:
    return ad.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return ad.mean(d * d)


def perceptual_loss(sr: Tensor, hr: Tensor, features: Callable[[Tensor], Tensor]) -> Tensor:
    """Mean squared distance between feature activations; no gradient flows into ``hr``."""
    if sr.shape != hr.shape:
        raise ShapeError(f"shape mismatch {sr.shape} vs {hr.shape}")
    with ad.no_grad():
        target = features(hr)
    return mse(features(sr), target)


def adversarial_loss_g(d_fake: Tensor, saturating: bool = False) -> Tensor:
    d = _clamped(d_fake)
    if saturating:
        return ad.mean(ad.log(1.0 - d))
    return -ad.mean(ad.log(d))


def discriminator_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    real = ad.log(_clamped(d_real))
    fake = ad.log(1.0 - _clamped(d_fake))
    return -(ad.mean(real) + ad.mean(fake))


def one_hot_labels(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes - 1}], got {labels.tolist()}")
    out = np.zeros((labels.size, num_classes, 1, 1))
    out[np.arange(labels.size), labels] = 1.0
    return out


def aux_class_loss(class_log_probs: Tensor, labels) -> Tensor:
    """Batch-mean negative log-likelihood of the true category."""
    n, k = class_log_probs.shape[:2]
    onehot = Tensor(one_hot_labels(labels, k).reshape((n, k) + (1,) * (class_log_probs.data.ndim - 2)))
    return -(ad.sum_all(class_log_probs * onehot) * (1.0 / n))


def generator_total_loss(sr: Tensor, hr: Tensor, d_fake: Tensor, class_log_probs: Tensor, labels,
                         weights: LossWeights, features: Callable[[Tensor], Tensor],
                         saturating: bool = False) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of perceptual, adversarial and auxiliary terms; also returns the parts."""
    lp = perceptual_loss(sr, hr, features)
    la = adversarial_loss_g(d_fake, saturating)
    lc = aux_class_loss(class_log_probs, labels)
    total = lp * weights.percep + la * weights.adv + lc * weights.cls
    return total, {"l_percep": lp.item(), "l_adv_g": la.item(), "l_cls_g": lc.item()}
