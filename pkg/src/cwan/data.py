"""Image I/O, synthetic low-light pairs, manifests and patch extraction."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .attention import TAU_HIGH_FRAC, TAU_LOW_FRAC, AttentionBundle, build_bundle
from .colorspace import linear_to_srgb, rgb_to_lab, srgb_to_linear

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm")
SPLITS = ("train", "val", "test")


class DataError(Exception):
    """Unreadable image, malformed manifest, or unusable dataset."""


# ---------------------------------------------------------------------------
# image files


def load_image(path):
    """Read an 8-bit PNG or PPM as float32 RGB in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def to_uint8(img):
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, img):
    """Write an RGB (H, W, 3) or grayscale (H, W) image; format from the suffix."""
    path = Path(path)
    fmt = {".png": "PNG", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise DataError(f"unsupported image format {path.suffix!r} (use .png or .ppm)")
    arr = to_uint8(img)
    if arr.ndim == 2 and fmt == "PPM":
        arr = np.repeat(arr[..., None], 3, axis=-1)
    Image.fromarray(arr).save(path, format=fmt)


def list_images(directory):
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# ---------------------------------------------------------------------------
# degradation


def synth_lowlight(img, intensity_decrease=0.85, domain="linear"):
    """Darken an sRGB image by scaling intensity with ``1 - intensity_decrease``.

    ``domain="linear"`` scales linear light (decode, scale, re-encode);
    ``domain="gamma"`` scales the encoded values directly.
    """
    if not 0.0 <= intensity_decrease < 1.0:
        raise ValueError(f"intensity_decrease must be in [0, 1), got {intensity_decrease}")
    img = np.asarray(img, dtype=np.float64)
    keep = 1.0 - intensity_decrease
    if domain == "linear":
        out = linear_to_srgb(srgb_to_linear(img) * keep)
    elif domain == "gamma":
        out = img * keep
    else:
        raise ValueError(f"domain must be 'linear' or 'gamma', got {domain!r}")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def add_gaussian_noise(img, sigma, seed=None):
    """Add i.i.d. Gaussian noise; ``sigma`` is on the 0-255 scale."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    img = np.asarray(img, dtype=np.float32)
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma / 255.0, size=img.shape)
    return np.clip(img + noise, 0.0, 1.0).astype(np.float32)


def toy_scene(size, rng, n_shapes=None):
    """Flat-colored rectangles and discs on a dominant background.

    Pixel values are exact multiples of 1/255 so color counting sees each
    region as one color.  Layouts are redrawn until the background keeps
    more than half the pixels.
    """
    h, w = (size, size) if np.isscalar(size) else size
    yy, xx = np.mgrid[0:h, 0:w]
    while True:
        palette = rng.integers(20, 236, size=(8, 3))
        labels = np.zeros((h, w), dtype=np.int64)
        count = int(rng.integers(2, 5)) if n_shapes is None else n_shapes
        for i in range(1, count + 1):
            ry = int(rng.integers(max(2, h // 8), max(3, h // 5) + 1))
            rx = int(rng.integers(max(2, w // 8), max(3, w // 5) + 1))
            cy, cx = int(rng.integers(ry, h - ry)), int(rng.integers(rx, w - rx))
            if rng.random() < 0.5:
                region = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
            else:
                region = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
            labels[region] = i
        if np.count_nonzero(labels == 0) * 2 > h * w:
            return (palette[labels] / 255.0).astype(np.float32)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class Entry:
    split: str
    low: Path
    gt: Path


@dataclass
class Dataset:
    entries: list[Entry]
    provenance: dict = field(default_factory=dict)
    root: Path | None = None

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def validate(self):
        seen = {}
        for e in self.entries:
            if e.split not in SPLITS:
                raise DataError(f"unknown split {e.split!r}")
            for p in (e.low, e.gt):
                if not p.is_file():
                    raise DataError(f"missing image {p}")
            prev = seen.setdefault(e.gt, e.split)
            if prev != e.split:
                raise DataError(f"{e.gt} appears in both {prev} and {e.split}")
        return self


def write_manifest(path, dataset):
    """Tab-separated ``split low gt`` lines, paths relative to the manifest."""
    path = Path(path)
    base = path.parent
    lines = []
    if dataset.provenance:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in dataset.provenance.items()))
    for e in dataset.entries:
        lines.append(f"{e.split}\t{_rel(e.low, base)}\t{_rel(e.gt, base)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _rel(p, base):
    try:
        return Path(p).resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        return Path(p).as_posix()


def read_manifest(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    entries, provenance = [], {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    provenance[k] = v
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{n}: expected 'split<TAB>low<TAB>gt'")
        split, low, gt = parts
        entries.append(Entry(split, path.parent / low, path.parent / gt))
    return Dataset(entries, provenance, path.parent).validate()


def assign_splits(n, seed, val_frac=0.0, test_frac=0.0):
    """Seeded split labels for ``n`` images."""
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_frac * n))
    n_val = int(round(val_frac * n))
    labels = ["train"] * n
    for i in order[:n_test]:
        labels[i] = "test"
    for i in order[n_test:n_test + n_val]:
        labels[i] = "val"
    return labels


def synthesize_dataset(sources, out_dir, decrease=0.85, sigma=0.0, seed=0, val_frac=0.0, test_frac=0.0, domain="linear"):
    """Write darkened (optionally noisy) copies of ``sources`` plus a manifest.

    ``sources`` is a list of image paths or of ``(name, array)`` pairs.
    Returns the :class:`Dataset` and the manifest path.
    """
    out = Path(out_dir)
    (out / "low").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    labels = assign_splits(len(sources), seed, val_frac, test_frac)
    entries = []
    for i, src in enumerate(sources):
        if isinstance(src, tuple):
            name, gt = src
        else:
            name, gt = Path(src).stem, load_image(src)
        low = synth_lowlight(gt, decrease, domain)
        low = add_gaussian_noise(low, sigma, seed=np.random.SeedSequence([seed, i]))
        gt_path, low_path = out / "gt" / f"{name}.png", out / "low" / f"{name}.png"
        save_image(gt_path, gt)
        save_image(low_path, low)
        entries.append(Entry(labels[i], low_path, gt_path))
    ds = Dataset(entries, {"decrease": decrease, "sigma": sigma, "seed": seed, "domain": domain}, out)
    manifest = out / "manifest.tsv"
    write_manifest(manifest, ds)
    return ds, manifest


def load_pairs(dataset, split="train"):
    return [(load_image(e.low), load_image(e.gt)) for e in dataset.split(split)]


# ---------------------------------------------------------------------------
# patches


@dataclass
class PatchSet:
    """Aligned low/ground-truth RGB patches with cached LAB channels.

    ``corners`` holds ``(image_index, top, left)`` per patch; ``bundles``
    is filled when attention supervision was requested.
    """

    low: np.ndarray  # (P, s, s, 3)
    gt: np.ndarray  # (P, s, s, 3)
    corners: list
    patch_size: int
    per_image: int
    seed: int
    bundles: list[AttentionBundle] | None = None

    def __post_init__(self):
        self.low_l, self.low_ab = rgb_to_lab(self.low)
        self.gt_l, self.gt_ab = rgb_to_lab(self.gt)

    def __len__(self):
        return len(self.low)

    @property
    def maps(self):
        return np.stack([b.map for b in self.bundles]) if self.bundles else None


def bundle_seed(seed, index):
    return np.random.SeedSequence([seed, 1, index])


def extract_patches(
    pairs,
    patch_size,
    per_image,
    seed=0,
    with_attention=False,
    beta=20,
    source="gt",
    tau_low_frac=TAU_LOW_FRAC,
    tau_high_frac=TAU_HIGH_FRAC,
):
    """Random crops from ``(low, gt)`` image pairs.

    Corners are uniform over valid positions, drawn image by image from one
    seeded generator.  With ``with_attention`` each patch carries an
    attention bundle built from the ``source`` patch ("gt" or "low").
    """
    if source not in ("gt", "low"):
        raise ValueError("source must be 'gt' or 'low'")
    rng = np.random.default_rng(seed)
    lows, gts, corners = [], [], []
    s = patch_size
    for i, (low, gt) in enumerate(pairs):
        if low.shape != gt.shape:
            raise DataError(f"pair {i}: low {low.shape} and gt {gt.shape} differ")
        h, w = low.shape[:2]
        if h < s or w < s:
            warnings.warn(f"image {i} ({h}x{w}) is smaller than patch size {s}; skipped", stacklevel=2)
            continue
        for _ in range(per_image):
            y = int(rng.integers(0, h - s + 1))
            x = int(rng.integers(0, w - s + 1))
            lows.append(low[y:y + s, x:x + s])
            gts.append(gt[y:y + s, x:x + s])
            corners.append((i, y, x))
    if not corners:
        raise DataError("no image is large enough for the requested patch size")
    ps = PatchSet(np.stack(lows).astype(np.float32), np.stack(gts).astype(np.float32), corners, s, per_image, seed)
    if with_attention:
        src_rgb = ps.gt if source == "gt" else ps.low
        src_ab = ps.gt_ab if source == "gt" else ps.low_ab
        ps.bundles = [
            build_bundle(src_rgb[k], src_ab[k], beta, bundle_seed(seed, k), tau_low_frac, tau_high_frac)
            for k in range(len(ps))
        ]
    return ps


def micro_dataset(n=5, size=32, seed=0, decrease=0.85, sigma=0.0):
    """Toy ground-truth scenes and their darkened versions, as in-memory pairs."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        gt = toy_scene(size, rng)
        low = add_gaussian_noise(synth_lowlight(gt, decrease), sigma, seed=np.random.SeedSequence([seed, i]))
        pairs.append((low, gt))
    return pairs
