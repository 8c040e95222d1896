"""Evaluation measures: PSNR, SSIM, LOE, colorfulness and attention diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.cluster.vq import kmeans2

from . import kernels
from .nn import ContractError


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given input (e.g. an empty pixel set)."""


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr_from_mse(mse, peak=1.0):
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``."""
    a, b = _pair(a, b)
    return psnr_from_mse(float(np.mean((a - b) ** 2)), peak)


# ---------------------------------------------------------------------------
# SSIM


def to_gray(img):
    """ITU-R BT.601 luma for RGB input; grayscale input passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    if img.ndim == 3 and img.shape[-1] == 1:
        return img[..., 0]
    return img


def gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, data_range=1.0, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean structural similarity over the valid (fully windowed) region.

    Statistics use an 11x11 Gaussian window (sigma 1.5) with population
    variances.  Images smaller than the window are reflected up to its size.
    """
    a, b = _pair(to_gray(a), to_gray(b))
    if np.array_equal(a, b):
        return 1.0
    pad = size - min(a.shape)
    if pad > 0:
        a = np.pad(a, ((0, max(0, size - a.shape[0])), (0, max(0, size - a.shape[1]))), mode="reflect")
        b = np.pad(b, ((0, max(0, size - b.shape[0])), (0, max(0, size - b.shape[1]))), mode="reflect")
    win = gaussian_window(size, sigma)

    def filt(x):
        return ndimage.correlate(x, win, mode="constant")[size // 2: x.shape[0] - size // 2, size // 2: x.shape[1] - size // 2]

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# lightness order error


def _downsample(lightness, target):
    h, w = lightness.shape
    ratio = target / min(h, w)
    if ratio >= 1.0:
        return lightness
    rows = np.floor(np.arange(int(h * ratio)) / ratio).astype(int)
    cols = np.floor(np.arange(int(w * ratio)) / ratio).astype(int)
    return lightness[np.ix_(rows, cols)]


def loe(low, enhanced, target=50):
    """Lightness-order error between a low-light image and its enhancement.

    Lightness is the per-pixel RGB maximum.  Both maps are subsampled by
    ``target / min(H, W)`` when that ratio is below 1; the result is the
    mean over pixels of how many other pixels change their ``>=`` relation.
    """
    low, enhanced = _pair(low, enhanced)
    la = low.max(axis=-1) if low.ndim == 3 else low
    lb = enhanced.max(axis=-1) if enhanced.ndim == 3 else enhanced
    la = np.ascontiguousarray(_downsample(la, target).ravel())
    lb = np.ascontiguousarray(_downsample(lb, target).ravel())
    return kernels.order_flips(la, lb) / la.size


# ---------------------------------------------------------------------------
# colorfulness


def colorfulness(img):
    """Opponent-channel colorfulness on the 0-255 scale."""
    rgb = np.asarray(img, dtype=np.float64) * 255.0
    r, g, b = rgb[..., 0].ravel(), rgb[..., 1].ravel(), rgb[..., 2].ravel()
    c1 = r - g
    c2 = 0.5 * (r + g) - b
    return float(np.hypot(c1.std(), c2.std()) + 0.37 * np.hypot(c1.mean(), c2.mean()))


# ---------------------------------------------------------------------------
# attention diagnostics


def neighborhood8(point_mask):
    """Pixels in the 3x3 neighborhood of any point, excluding the points."""
    pm = np.asarray(point_mask).astype(bool)
    grown = ndimage.binary_dilation(pm, structure=np.ones((3, 3), dtype=bool))
    return grown & ~pm


def masked_sse(pred, gt, region):
    """Sum of squared errors and element count over ``region`` ((H, W) or batched)."""
    pred, gt = _pair(pred, gt)
    region = np.asarray(region).astype(bool)
    if region.shape != pred.shape[: region.ndim]:
        raise ContractError(f"region {region.shape} does not match {pred.shape}")
    sel = (pred - gt)[region]
    return float(np.sum(sel**2)), sel.size


def psnr_at_points(pred, gt, point_mask, mode="points", peak=1.0):
    """PSNR restricted to the marked points or to their 8-neighborhoods."""
    if mode == "points":
        region = np.asarray(point_mask).astype(bool)
    elif mode == "neighborhood8":
        pm = np.asarray(point_mask)
        region = neighborhood8(pm) if pm.ndim == 2 else np.stack([neighborhood8(m) for m in pm])
    else:
        raise ValueError(f"mode must be 'points' or 'neighborhood8', got {mode!r}")
    sse, n = masked_sse(pred, gt, region)
    if n == 0:
        raise UndefinedMetricError("PSNR over an empty pixel set")
    return psnr_from_mse(sse / n, peak)


# ---------------------------------------------------------------------------
# color coverage


@dataclass
class ColorClusterMap:
    centers: np.ndarray  # (40, 2) in normalized ab

    def assign(self, ab):
        """Cluster ids 1..K (never 0) of each pixel's nearest center."""
        ab = np.asarray(ab, dtype=np.float64)
        d = ((ab[..., None, :] - self.centers) ** 2).sum(axis=-1)
        return np.argmin(d, axis=-1) + 1


def color_clusters(k=40, seed=0, samples=20000):
    """Seeded k-means centers over the normalized ab square."""
    rng = np.random.default_rng(seed)
    pts = rng.random((samples, 2))
    centers, _ = kmeans2(pts, k, minit="++", seed=rng)
    return ColorClusterMap(np.asarray(centers, dtype=np.float64))


def color_coverage(gt_ab_patches, point_masks, clusters):
    """Mean and std (in percent) of the share of present clusters hit by points."""
    scores = []
    for ab, pm in zip(gt_ab_patches, point_masks):
        cmap = clusters.assign(ab)
        present = np.unique(cmap)
        hit = np.unique((cmap * np.asarray(pm).astype(np.int64))[np.asarray(pm).astype(bool)])
        hit = hit[hit != 0]
        scores.append(100.0 * hit.size / present.size)
    if not scores:
        raise UndefinedMetricError("color coverage needs at least one patch")
    scores = np.array(scores)
    return float(scores.mean()), float(scores.std())


# ---------------------------------------------------------------------------
# reports


METRIC_COLUMNS = ("psnr", "ssim", "loe", "colorfulness")


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, name, **values):
        self.rows.append({"image": name, **values})

    def aggregate(self):
        out = {}
        for col in METRIC_COLUMNS:
            vals = np.array([r[col] for r in self.rows if col in r and r[col] is not None], dtype=float)
            finite = vals[np.isfinite(vals)]
            if vals.size and finite.size == vals.size:
                out[col] = (float(vals.mean()), float(vals.std()))
            elif vals.size:
                out[col] = (math.inf, math.nan)
        return out

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("image", *METRIC_COLUMNS))
            for r in self.rows:
                w.writerow([r["image"], *(format_value(r.get(c)) for c in METRIC_COLUMNS)])

    def table(self):
        header = ("image", *METRIC_COLUMNS)
        body = [[r["image"], *(format_value(r.get(c)) for c in METRIC_COLUMNS)] for r in self.rows]
        agg = self.aggregate()
        body.append(["mean", *(format_value(agg[c][0]) if c in agg else "" for c in METRIC_COLUMNS)])
        body.append(["std", *(format_value(agg[c][1]) if c in agg else "" for c in METRIC_COLUMNS)])
        widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
        lines = ["  ".join(str(v).rjust(wd) for v, wd in zip(row, widths)) for row in [header, *body]]
        return "\n".join(lines)


def format_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        if math.isnan(v):
            return "nan"
        return f"{v:.6f}"
    return str(v)
