"""Loss values and analytic logit gradients for single images.

Every loss takes N x K probabilities (softmax output) and returns a
``LossValue`` plus, from its ``*_grad`` twin, the gradient with respect to
the N x K logits. Losses of a batch are the mean of the per-image losses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import DomainError, ProbField, values_of

LOG_CLAMP = 1e-12
NORMALIZATIONS = ("none", "per_NK", "per_N")


@dataclass(frozen=True)
class LossValue:
    value: float
    normalization: str
    components: np.ndarray | None = None

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise DomainError(f"unknown normalization {self.normalization!r}")

    def __float__(self) -> float:
        return float(self.value)


def _pair(P, Q):
    p = values_of(P)
    q = values_of(Q)
    if p.shape != q.shape or p.ndim != 2:
        raise DomainError(f"shape mismatch {p.shape} vs {q.shape}")
    return p, q


def _scale(normalization: str, n: int, k: int) -> float:
    if normalization == "none":
        return 1.0
    if normalization == "per_NK":
        return 1.0 / (n * k)
    if normalization == "per_N":
        return 1.0 / n
    raise DomainError(f"unknown normalization {normalization!r}")


def softmax(logits) -> np.ndarray:
    phi = values_of(logits)
    e = np.exp(phi - phi.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_field(logits) -> ProbField:
    return ProbField(logits.dims, softmax(logits), logits.spacing)


def softmax_jacobian(p) -> np.ndarray:
    """K x K Jacobian d p_k / d phi_l = p_k (delta_kl - p_l)."""
    p = np.asarray(p, dtype=np.float64).ravel()
    return np.diag(p) - np.outer(p, p)


def softmax_backward(p: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. probabilities back to the logits, row by row."""
    return p * (upstream - np.sum(p * upstream, axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# Region-wise loss


def rw_loss(P, Z, normalization: str = "per_NK") -> LossValue:
    p, z = _pair(P, Z)
    n, k = p.shape
    per_class = np.sum(p * z, axis=0) * _scale(normalization, n, k)
    return LossValue(float(per_class.sum()), normalization, per_class)


def rw_loss_grad(P, Z, normalization: str = "per_NK") -> np.ndarray:
    """``g_ik = p_ik * sum_{l != k} p_il (z_ik - z_il)``, evaluated pairwise.

    The pairwise form keeps the sign of each component exact for rectified
    maps, where every summand is non-negative (or non-positive).
    """
    p, z = _pair(P, Z)
    n, k = p.shape
    diff = z[:, :, None] - z[:, None, :]
    g = p * np.einsum("nkl,nl->nk", diff, p)
    return g * _scale(normalization, n, k)


def rw2_loss(P, Z, normalization: str = "per_N") -> LossValue:
    """RW loss on squared probabilities (one-sided HD loss form)."""
    p, z = _pair(P, Z)
    n, k = p.shape
    per_class = np.sum(p * p * z, axis=0) * _scale(normalization, n, k)
    return LossValue(float(per_class.sum()), normalization, per_class)


def rw2_loss_grad(P, Z, normalization: str = "per_N") -> np.ndarray:
    p, z = _pair(P, Z)
    n, k = p.shape
    return softmax_backward(p, 2.0 * p * z) * _scale(normalization, n, k)


# ---------------------------------------------------------------------------
# Cross-entropy family


def pwce_loss(P, Y, W=None) -> LossValue:
    """Pixel-weighted cross entropy ``-(1/N) sum w_ik y_ik log p_ik``."""
    p, y = _pair(P, Y)
    w = np.ones_like(p) if W is None else values_of(W)
    if w.shape != p.shape:
        raise DomainError(f"weights of shape {w.shape} do not match {p.shape}")
    if np.any(w < 0):
        raise DomainError("pixel weights must be non-negative")
    n = p.shape[0]
    terms = -w * y * np.log(np.maximum(p, LOG_CLAMP))
    per_class = terms.sum(axis=0) / n
    return LossValue(float(per_class.sum()), "per_N", per_class)


def pwce_grad(P, Y, W=None) -> np.ndarray:
    """``(-w_ik y_ik + p_ik sum_l w_il y_il) / N``."""
    p, y = _pair(P, Y)
    w = np.ones_like(p) if W is None else values_of(W)
    wy = w * y
    return (-wy + p * wy.sum(axis=1, keepdims=True)) / p.shape[0]


def ce_loss(P, Y) -> LossValue:
    return pwce_loss(P, Y)


def ce_grad(P, Y) -> np.ndarray:
    return pwce_grad(P, Y)


def _true_prob(p, y):
    return np.sum(p * y, axis=1)


def focal_loss(P, Y, gamma: float = 2.0, alpha: float = 1.0) -> LossValue:
    p, y = _pair(P, Y)
    if gamma < 0 or alpha <= 0:
        raise DomainError("focal loss needs gamma >= 0 and alpha > 0")
    pt = _true_prob(p, y)
    terms = -alpha * (1.0 - pt) ** gamma * np.log(np.maximum(pt, LOG_CLAMP))
    per_class = (terms[:, None] * y).sum(axis=0) / p.shape[0]
    return LossValue(float(terms.sum() / p.shape[0]), "per_N", per_class)


def focal_grad(P, Y, gamma: float = 2.0, alpha: float = 1.0) -> np.ndarray:
    p, y = _pair(P, Y)
    pt = _true_prob(p, y)
    one_minus = 1.0 - pt
    logp = np.log(np.maximum(pt, LOG_CLAMP))
    dlog = np.where(pt > LOG_CLAMP, 1.0 / np.maximum(pt, LOG_CLAMP), 0.0)
    if gamma == 0:
        dmod = np.zeros_like(pt)
    else:
        dmod = -gamma * one_minus ** (gamma - 1.0)
    dpt = -alpha * (dmod * logp + one_minus ** gamma * dlog)
    return softmax_backward(p, dpt[:, None] * y) / p.shape[0]


DICE_EPS = 1e-5


def dice_loss(P, Y, eps: float = DICE_EPS) -> LossValue:
    """Soft Dice loss averaged over all K classes, background included."""
    p, y = _pair(P, Y)
    if eps <= 0:
        raise DomainError("dice epsilon must be positive")
    inter = np.sum(p * y, axis=0)
    denom = p.sum(axis=0) + y.sum(axis=0) + eps
    per_class = 1.0 - (2.0 * inter + eps) / denom
    return LossValue(float(per_class.mean()), "none", per_class)


def dice_grad(P, Y, eps: float = DICE_EPS) -> np.ndarray:
    p, y = _pair(P, Y)
    k = p.shape[1]
    num = 2.0 * np.sum(p * y, axis=0) + eps
    denom = p.sum(axis=0) + y.sum(axis=0) + eps
    dp = -(2.0 * y * denom - num) / (denom * denom) / k
    return softmax_backward(p, dp)


# ---------------------------------------------------------------------------
# Combined schedules

LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class CombinedSchedule:
    """Weighting of two partner losses across ``epochs`` epochs.

    ``equal`` uses unit weights; ``gradual`` weights partner A by ``alpha``
    falling linearly from ``alpha_start`` at epoch 0 to ``alpha_end`` at the
    last epoch and partner B by ``1 - alpha``.
    """

    partners: tuple[LossFn, LossFn] | None
    mode: str
    epochs: int
    alpha_start: float = 1.0
    alpha_end: float = 0.01

    def __post_init__(self):
        if self.mode not in ("equal", "gradual"):
            raise DomainError(f"unknown schedule mode {self.mode!r}")
        if self.epochs < 1:
            raise DomainError("schedule needs at least one epoch")
        if self.alpha_end > self.alpha_start:
            raise DomainError("alpha must not increase across epochs")

    def alpha(self, epoch: int) -> float:
        if not 0 <= epoch < self.epochs:
            raise DomainError(f"epoch {epoch} outside [0, {self.epochs})")
        if self.epochs == 1:
            return self.alpha_start
        if epoch == self.epochs - 1:
            return self.alpha_end
        t = epoch / (self.epochs - 1)
        return self.alpha_start + (self.alpha_end - self.alpha_start) * t

    def weights(self, epoch: int) -> tuple[float, float]:
        a = self.alpha(epoch)
        if self.mode == "equal":
            return 1.0, 1.0
        return a, 1.0 - a


def combined_loss(schedule: CombinedSchedule, epoch: int, probs) -> tuple[float, np.ndarray, tuple[float, float]]:
    """Weighted value and logit gradient of the two partner losses."""
    wa, wb = schedule.weights(epoch)
    fa, fb = schedule.partners
    va, ga = fa(probs)
    vb, gb = fb(probs)
    return wa * va + wb * vb, wa * ga + wb * gb, (wa, wb)
