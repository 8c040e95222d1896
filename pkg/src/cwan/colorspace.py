"""sRGB <-> normalized CIE-LAB (D65).

Networks consume lightness and color channels rescaled to [0, 1]:
``L = L*/100`` and ``a = (a* + 128)/255`` (same for b).
"""

from __future__ import annotations

import numpy as np

# sRGB primaries, D65 white
RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)
D65_WHITE = RGB_TO_XYZ.sum(axis=1)

_EPS = (6.0 / 29.0) ** 3
_KAPPA = 3.0 * (6.0 / 29.0) ** 2

AB_OFFSET = 128.0
AB_SCALE = 255.0


def srgb_to_linear(c):
    """Decode the sRGB transfer curve."""
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    """Encode linear light with the sRGB transfer curve."""
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, None)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _f(t):
    return np.where(t > _EPS, np.cbrt(t), t / _KAPPA + 4.0 / 29.0)


def _finv(t):
    return np.where(t > 6.0 / 29.0, t**3, _KAPPA * (t - 4.0 / 29.0))


def rgb_to_cielab(rgb):
    """Unscaled CIE L*a*b* (L* in [0, 100]) from sRGB in [0, 1]."""
    xyz = srgb_to_linear(rgb) @ RGB_TO_XYZ.T
    fx, fy, fz = np.moveaxis(_f(xyz / D65_WHITE), -1, 0)
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def cielab_to_rgb(lab):
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = _finv(np.stack([fx, fy, fz], axis=-1)) * D65_WHITE
    return np.clip(linear_to_srgb(xyz @ XYZ_TO_RGB.T), 0.0, 1.0)


def rgb_to_lab(img):
    """Split an sRGB image into normalized lightness and color.

    Parameters
    ----------
    img : ndarray, shape (..., 3)
        sRGB values in [0, 1].

    Returns
    -------
    lightness : ndarray, shape (...)
        ``L*/100``.
    ab : ndarray, shape (..., 2)
        ``(a*, b*)`` mapped from [-128, 127] to [0, 1].
    """
    lab = rgb_to_cielab(img)
    lightness = np.clip(lab[..., 0] / 100.0, 0.0, 1.0)
    ab = np.clip((lab[..., 1:] + AB_OFFSET) / AB_SCALE, 0.0, 1.0)
    return lightness.astype(np.float32), ab.astype(np.float32)


def lab_to_rgb(lightness, ab):
    """Inverse of :func:`rgb_to_lab`; out-of-gamut colors are clamped to [0, 1]."""
    lightness = np.asarray(lightness, dtype=np.float64)
    ab = np.asarray(ab, dtype=np.float64)
    if ab.shape[:-1] != lightness.shape or ab.shape[-1] != 2:
        raise ValueError(f"lightness {lightness.shape} and ab {ab.shape} do not match")
    lab = np.concatenate([lightness[..., None] * 100.0, ab * AB_SCALE - AB_OFFSET], axis=-1)
    return cielab_to_rgb(lab).astype(np.float32)
