"""Color-frequency attention supervision.

For a patch with N pixels, every pixel is scored by how many pixels share
its exact 8-bit RGB color.  Colors that are neither dominant (>= tau_u) nor
rare (<= tau_l) form the foreground mask; the a*b* channels restricted to
that mask, min-max normalized, are the attention map M, and a random subset
of its non-zero coordinates gives the point mask B_P and points P.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ContractError

TAU_LOW_FRAC = 0.05
TAU_HIGH_FRAC = 0.5
BETA = 20


@dataclass
class AttentionBundle:
    mask: np.ndarray  # (H, W) uint8, foreground-frequency mask
    map: np.ndarray  # (H, W, 2) float32 in [0, 1]
    point_mask: np.ndarray  # (H, W) uint8
    points: np.ndarray  # (H, W, 2) float32
    beta_requested: int

    @property
    def beta_effective(self):
        return int(self.point_mask.sum())


def quantize_rgb(img):
    """Pack 8-bit quantized RGB triples into one integer code per pixel."""
    q = np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.int64)
    return (q[..., 0] << 16) | (q[..., 1] << 8) | q[..., 2]


def color_frequency(img):
    """Per-pixel count of pixels sharing that pixel's quantized color.

    >>> color_frequency(np.zeros((2, 3, 3))).tolist()
    [[6, 6, 6], [6, 6, 6]]
    """
    codes = quantize_rgb(img)
    _, inverse, counts = np.unique(codes.ravel(), return_inverse=True, return_counts=True)
    return counts[inverse].reshape(codes.shape)


def thresholds(n_pixels, low_frac=TAU_LOW_FRAC, high_frac=TAU_HIGH_FRAC):
    return low_frac * n_pixels, high_frac * n_pixels


def frequency_mask(freq, tau_low, tau_high):
    """Binary mask of pixels with ``tau_low < freq < tau_high`` (both strict)."""
    if not tau_low < tau_high:
        raise ContractError(f"tau_low ({tau_low}) must be below tau_high ({tau_high})")
    freq = np.asarray(freq)
    return ((freq > tau_low) & (freq < tau_high)).astype(np.uint8)


def attention_map(x_ab, mask):
    """Mask the color channels and rescale each channel's support to [0, 1].

    Normalization is min-max over the masked pixels of each channel; a
    constant channel maps to 1 on the mask.  An empty mask gives zeros.
    """
    x_ab = np.asarray(x_ab, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if x_ab.shape[:2] != mask.shape or x_ab.shape[-1] != 2:
        raise ContractError(f"ab {x_ab.shape} does not match mask {mask.shape}")
    out = np.zeros(x_ab.shape, dtype=np.float32)
    if not mask.any():
        return out
    for i in range(2):
        vals = x_ab[..., i][mask]
        lo, hi = vals.min(), vals.max()
        if hi > lo:
            out[..., i][mask] = (vals - lo) / (hi - lo)
        else:
            out[..., i][mask] = 1.0
    return out


def map_support(m):
    """Coordinates where either channel of the attention map is non-zero."""
    return np.any(np.asarray(m) != 0, axis=-1)


def sample_attention_points(m, beta=BETA, seed=None):
    """Draw ``min(beta, |support|)`` support pixels uniformly without replacement.

    Returns ``(point_mask, points)`` with ``points = m * point_mask`` per channel.
    """
    if beta < 1:
        raise ContractError(f"beta must be >= 1, got {beta}")
    m = np.asarray(m, dtype=np.float32)
    support = np.flatnonzero(map_support(m))
    rng = np.random.default_rng(seed)
    k = min(beta, support.size)
    chosen = rng.choice(support, size=k, replace=False) if k else support[:0]
    point_mask = np.zeros(m.shape[:2], dtype=np.uint8)
    point_mask.flat[chosen] = 1
    return point_mask, m * point_mask[..., None]


def build_bundle(rgb, ab=None, beta=BETA, seed=None, low_frac=TAU_LOW_FRAC, high_frac=TAU_HIGH_FRAC):
    """Full supervision bundle for one patch.

    ``rgb`` drives the color counting; ``ab`` (normalized a*b* of the same
    patch) fills the map and defaults to the conversion of ``rgb``.
    """
    if ab is None:
        from .colorspace import rgb_to_lab

        _, ab = rgb_to_lab(rgb)
    freq = color_frequency(rgb)
    lo, hi = thresholds(freq.size, low_frac, high_frac)
    mask = frequency_mask(freq, lo, hi)
    m = attention_map(ab, mask)
    point_mask, points = sample_attention_points(m, beta, seed)
    return AttentionBundle(mask, m, point_mask, points, beta)


def top_responses(m_hat, k=30):
    """Row/column coordinates of the ``k`` largest responses (channel maximum)."""
    score = np.asarray(m_hat).max(axis=-1)
    flat = np.argsort(score.ravel(), kind="stable")[::-1][:k]
    return np.column_stack(np.unravel_index(flat, score.shape))
