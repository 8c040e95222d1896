"""Training objectives; every function returns ``(value, gradient)``.

L1 is a mean over all elements.  Huber is either a mean over elements or,
for the color objective, a sum over each patch's pixels averaged over the
batch; the attention-point term is a squared error summed over the point
mask and divided by the number of points actually available (at most beta)
for each patch, then averaged over the batch.  With the per-patch sum both
color terms live on the same per-patch scale, so ``alpha = 1`` weighs them
comparably.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ContractError


HUBER_REDUCTIONS = ("patch_sum", "mean")


@dataclass
class LossConfig:
    alpha: float = 1.0
    delta: float = 0.5
    beta: int = 20
    huber_reduction: str = "patch_sum"

    def __post_init__(self):
        if self.huber_reduction not in HUBER_REDUCTIONS:
            raise ValueError(f"huber_reduction must be one of {HUBER_REDUCTIONS}, got {self.huber_reduction!r}")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ContractError(f"prediction {a.shape} and target {b.shape} differ in shape")


def l1_loss(pred, target):
    _same_shape(pred, target)
    diff = pred - target
    value = float(np.mean(np.abs(diff), dtype=np.float64))
    return value, (np.sign(diff) / diff.size).astype(pred.dtype)


def huber_loss(pred, target, delta=0.5, reduction="mean"):
    """Huber loss; ``reduction="patch_sum"`` sums each patch of an (N, H, W, C) batch and averages over N."""
    _same_shape(pred, target)
    if delta <= 0:
        raise ContractError("delta must be positive")
    e = pred - target
    a = np.abs(e)
    quad = a <= delta
    per = np.where(quad, 0.5 * e * e, delta * a - 0.5 * delta * delta)
    if reduction == "mean":
        count = e.size
    elif reduction == "patch_sum":
        count = len(e) if e.ndim == 4 else 1
    else:
        raise ContractError(f"unknown reduction {reduction!r}")
    grad = np.where(quad, e, delta * np.sign(e)) / count
    return float(np.sum(per, dtype=np.float64) / count), grad.astype(pred.dtype)


def masked_mse(p_hat, p, point_mask, beta_effective=None):
    """Squared error on masked pixels over ``beta_effective``.

    Accepts single patches ``(H, W, 2)`` with mask ``(H, W)`` or batches
    ``(N, H, W, 2)`` with masks ``(N, H, W)``.  ``beta_effective`` defaults to
    the number of marked pixels of each patch; patches without points add 0.
    """
    _same_shape(p_hat, p)
    single = p_hat.ndim == 3
    if single:
        p_hat, p, point_mask = p_hat[None], p[None], point_mask[None]
    if point_mask.shape != p_hat.shape[:-1]:
        raise ContractError(f"point mask {point_mask.shape} does not match {p_hat.shape}")
    mask = point_mask.astype(p_hat.dtype)[..., None]
    if beta_effective is None:
        beta_effective = point_mask.reshape(len(point_mask), -1).sum(axis=1)
    beta_effective = np.broadcast_to(np.asarray(beta_effective, dtype=np.float64), (len(p_hat),))
    diff = (p_hat - p) * mask
    per_patch = np.sum(diff.astype(np.float64) ** 2, axis=(1, 2, 3))
    scale = np.divide(1.0, beta_effective, out=np.zeros_like(beta_effective), where=beta_effective > 0)
    n = len(p_hat)
    value = float(np.sum(per_patch * scale) / n)
    grad = (2.0 * diff * (scale / n).astype(p_hat.dtype)[:, None, None, None]).astype(p_hat.dtype)
    return value, (grad[0] if single else grad)


def cwan_ab_loss(x_hat, y, p_hat, p, point_mask, config: LossConfig):
    """Huber on colors plus ``alpha`` times the point loss.

    Returns ``(total, parts, grad_x, grad_p)`` with ``parts`` holding the
    ``huber`` and ``mse`` components.
    """
    h, gx = huber_loss(x_hat, y, config.delta, config.huber_reduction)
    if p_hat is None:
        return h, {"huber": h, "mse": 0.0}, gx, None
    m, gp = masked_mse(p_hat, p, point_mask)
    gp = gp * p_hat.dtype.type(config.alpha)
    return h + config.alpha * m, {"huber": h, "mse": m}, gx, gp
