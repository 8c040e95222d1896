import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cwan import metrics
from cwan.metrics import UndefinedMetricError


def brute_loe(low, enh):
    la = low.max(axis=-1).ravel()
    lb = enh.max(axis=-1).ravel()
    n = la.size
    total = 0
    for i in range(n):
        for j in range(n):
            total += (la[i] >= la[j]) != (lb[i] >= lb[j])
    return total / n


def test_psnr_examples():
    a = np.random.default_rng(0).random((8, 8, 3)) * 0.9
    assert metrics.psnr(a, a) == math.inf
    assert metrics.psnr(a, a + 1 / 255) == pytest.approx(20 * math.log10(255), abs=1e-9)
    e = np.random.default_rng(1).standard_normal(a.shape) * 0.01
    assert metrics.psnr(a + e / 2, a) - metrics.psnr(a + e, a) == pytest.approx(20 * math.log10(2), abs=1e-9)
    assert metrics.format_value(math.inf) == "inf"


def test_psnr_translation_invariance():
    rng = np.random.default_rng(2)
    a = rng.random((8, 8)) * 0.5
    b = a + rng.standard_normal(a.shape) * 0.01
    assert metrics.psnr(a, b) == pytest.approx(metrics.psnr(a + 0.3, b + 0.3), abs=1e-9)


def test_ssim_identity_and_symmetry():
    rng = np.random.default_rng(3)
    a, b = rng.random((2, 24, 24, 3))
    assert metrics.ssim(a, a) == 1.0
    assert abs(metrics.ssim(a, b) - metrics.ssim(b, a)) < 1e-9


def test_ssim_constant_closed_form():
    a = np.full((20, 20), 0.4)
    b = a + 0.1
    c1 = 0.01**2
    expect = (2 * 0.4 * 0.5 + c1) / (0.4**2 + 0.5**2 + c1)
    assert metrics.ssim(a, b) == pytest.approx(expect, abs=1e-9)


def test_ssim_against_skimage():
    skm = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(4)
    a = rng.random((32, 32))
    b = np.clip(a + rng.standard_normal(a.shape) * 0.1, 0, 1)
    ref = skm.structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
    assert metrics.ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_loe_examples():
    rng = np.random.default_rng(5)
    low = rng.random((8, 8, 3)) * 0.3
    assert metrics.loe(low, low) == 0
    assert metrics.loe(low, np.sqrt(low)) == 0
    perm = rng.permutation(64).reshape(8, 8) / 64
    distinct = np.repeat(perm[..., None], 3, axis=-1)
    inverted = 1 - distinct
    assert metrics.loe(distinct, inverted) == brute_loe(distinct, inverted) == 63


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_loe_brute_force(seed):
    rng = np.random.default_rng(seed)
    low = rng.integers(0, 6, (8, 8, 3)) / 5
    enh = rng.integers(0, 6, (8, 8, 3)) / 5
    assert metrics.loe(low, enh) == brute_loe(low, enh)


def test_loe_downsamples_large_images():
    rng = np.random.default_rng(6)
    low = rng.random((100, 120, 3))
    ds = metrics._downsample(low.max(axis=-1), 50)
    assert ds.shape == (50, 60)


def test_colorfulness():
    gray = np.repeat(np.random.default_rng(7).random((6, 6, 1)), 3, axis=-1)
    assert metrics.colorfulness(gray) == pytest.approx(0, abs=1e-9)
    img = np.zeros((2, 2, 3))
    img[0, :, 0] = 1.0
    img[1, :, 1] = 1.0
    # C1 = +-255, C2 = 127.5 everywhere: std(C1)=255, mean(C2)=127.5
    assert metrics.colorfulness(img) == pytest.approx(255 + 0.37 * 127.5)


def test_colorfulness_increases_with_saturation():
    rng = np.random.default_rng(8)
    img = rng.random((8, 8, 3)) * 0.5 + 0.25
    gray = img.mean(axis=-1, keepdims=True)
    vals = [metrics.colorfulness(gray + s * (img - gray)) for s in (0.5, 1.0, 1.5)]
    assert vals[0] < vals[1] < vals[2]


def test_point_psnr():
    rng = np.random.default_rng(9)
    pred, gt = rng.random((2, 8, 8, 2))
    assert metrics.psnr_at_points(pred, gt, np.ones((8, 8)), "points") == pytest.approx(metrics.psnr(pred, gt))
    pm = np.zeros((8, 8), np.uint8)
    pm[3, 3] = 1
    pred2 = pred.copy()
    pred2[3, 3] = gt[3, 3]
    assert metrics.psnr_at_points(pred2, gt, pm) == math.inf
    with pytest.raises(UndefinedMetricError):
        metrics.psnr_at_points(pred, gt, np.zeros((8, 8)))
    nb = metrics.neighborhood8(pm)
    assert nb.sum() == 8 and not nb[3, 3]


def test_color_clusters():
    cl = metrics.color_clusters(40, seed=0)
    assert cl.centers.shape == (40, 2)
    ids = cl.assign(np.random.default_rng(10).random((16, 16, 2)))
    assert ids.min() >= 1 and ids.max() <= 40
    np.testing.assert_array_equal(metrics.color_clusters(40, seed=0).centers, cl.centers)


def test_color_coverage_examples():
    cl = metrics.color_clusters(40, seed=0)
    flat = np.full((8, 8, 2), 0.5)
    pm = np.zeros((8, 8), np.uint8)
    pm[0, 0] = 1
    assert metrics.color_coverage([flat], [pm], cl) == (100.0, 0.0)
    ab = np.random.default_rng(11).random((4, 4, 2))
    assert metrics.color_coverage([ab], [np.ones((4, 4))], cl)[0] == 100.0


def test_report(tmp_path):
    r = metrics.MetricReport()
    r.add("a.png", psnr=20.0, ssim=0.5, loe=1.0, colorfulness=3.0)
    r.add("b.png", psnr=30.0, ssim=0.7, loe=3.0, colorfulness=5.0)
    assert r.aggregate()["psnr"] == (25.0, 5.0)
    r.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "image,psnr,ssim,loe,colorfulness"
    assert "mean" in r.table()
