import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cwan.colorspace import cielab_to_rgb, lab_to_rgb, rgb_to_cielab, rgb_to_lab


def _lab_by_hand(r, g, b):
    """Independent scalar sRGB -> CIELAB (D65) evaluation."""

    def lin(c):
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    rl, gl, bl = lin(r), lin(g), lin(b)
    x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl
    y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl
    z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl
    xn, yn, zn = 0.95047, 1.0, 1.08883

    def f(t):
        return t ** (1 / 3) if t > (6 / 29) ** 3 else t / (3 * (6 / 29) ** 2) + 4 / 29

    fx, fy, fz = f(x / xn), f(y / yn), f(z / zn)
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


def test_black_and_white():
    for v, expect_l in ((0.0, 0.0), (1.0, 1.0)):
        light, ab = rgb_to_lab(np.full((1, 1, 3), v))
        assert light[0, 0] == pytest.approx(expect_l, abs=1e-6)
        np.testing.assert_allclose(ab[0, 0], 128 / 255, atol=1e-4)


def test_mid_gray_lightness():
    lab = rgb_to_cielab(np.full((1, 1, 3), 0.5))
    expect = _lab_by_hand(0.5, 0.5, 0.5)
    assert lab[0, 0, 0] == pytest.approx(expect[0], abs=1e-3)
    assert lab[0, 0, 0] == pytest.approx(53.39, abs=0.01)


def test_against_hand_formula():
    rng = np.random.default_rng(3)
    for rgb in rng.random((50, 3)):
        lab = rgb_to_cielab(rgb.reshape(1, 1, 3))[0, 0]
        np.testing.assert_allclose(lab, _lab_by_hand(*rgb), atol=2e-3)


def test_against_skimage():
    skcolor = pytest.importorskip("skimage.color")
    rng = np.random.default_rng(4)
    img = rng.random((16, 16, 3))
    # skimage rounds its matrix and white point differently (about 5e-3 in a*, b*)
    np.testing.assert_allclose(rgb_to_cielab(img), skcolor.rgb2lab(img), atol=1e-2)


def test_white_lab_to_rgb():
    out = lab_to_rgb(np.ones((1, 1)), np.full((1, 1, 2), 128 / 255))
    np.testing.assert_allclose(out, 1.0, atol=1 / 255)


def test_gray_lightness_strictly_increasing():
    t = np.linspace(0, 1, 256)
    gray = np.repeat(t[:, None, None], 3, axis=-1).reshape(1, 256, 3)
    light, _ = rgb_to_lab(gray)
    assert np.all(np.diff(light[0].astype(np.float64)) > 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lab_to_rgb_stays_in_range(seed):
    rng = np.random.default_rng(seed)
    out = lab_to_rgb(rng.random((4, 4)), rng.random((4, 4, 2)))
    assert out.min() >= 0.0 and out.max() <= 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip(seed):
    img = np.random.default_rng(seed).random((6, 6, 3)).astype(np.float32)
    assert np.abs(lab_to_rgb(*rgb_to_lab(img)) - img).max() < 1 / 255


def test_cielab_inverse():
    rng = np.random.default_rng(5)
    img = rng.random((8, 8, 3))
    np.testing.assert_allclose(cielab_to_rgb(rgb_to_cielab(img)), img, atol=1e-6)


def test_batched_shapes():
    light, ab = rgb_to_lab(np.zeros((2, 5, 4, 3), dtype=np.float32))
    assert light.shape == (2, 5, 4) and ab.shape == (2, 5, 4, 2)
    assert light.dtype == np.float32 and ab.dtype == np.float32
