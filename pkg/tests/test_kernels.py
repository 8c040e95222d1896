import os
import subprocess
import sys

import numpy as np
import pytest

from cwan import _pykernels, kernels

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


def _pad(x, k):
    p = k // 2
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def _im2col_loop(xp, k, h, w):
    n, _, _, c = xp.shape
    out = np.zeros((n, h, w, k, k, c), dtype=xp.dtype)
    for ky in range(k):
        for kx in range(k):
            out[:, :, :, ky, kx, :] = xp[:, ky:ky + h, kx:kx + w, :]
    return out.reshape(n * h * w, k * k * c)


@pytest.mark.parametrize("name", BACKENDS)
@pytest.mark.parametrize("k", [1, 3, 5])
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_im2col_matches_loop(name, k, dtype):
    be = kernels.get_backend(name)
    rng = np.random.default_rng(k)
    x = rng.standard_normal((2, 6, 5, 3)).astype(dtype)
    xp = _pad(x, k)
    cols = np.empty((2 * 6 * 5, k * k * 3), dtype=dtype)
    be.im2col(xp, k, cols)
    np.testing.assert_array_equal(cols, _im2col_loop(xp, k, 6, 5))


@pytest.mark.parametrize("name", BACKENDS)
def test_col2im_is_adjoint(name):
    be = kernels.get_backend(name)
    rng = np.random.default_rng(0)
    k, (n, h, w, c) = 3, (2, 5, 4, 3)
    xp = rng.standard_normal((n, h + 2, w + 2, c))
    d = rng.standard_normal((n * h * w, k * k * c))
    cols = np.empty_like(d)
    be.im2col(xp, k, cols)
    dxp = np.zeros_like(xp)
    be.col2im(d, dxp, k)
    assert np.sum(cols * d) == pytest.approx(np.sum(xp * dxp), rel=1e-12)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")
def test_backends_bitwise_equal():
    cy = kernels.get_backend("cython")
    rng = np.random.default_rng(1)
    xp = rng.standard_normal((3, 10, 9, 8)).astype(np.float32)
    a = np.empty((3 * 8 * 7, 9 * 8), np.float32)
    b = np.empty_like(a)
    cy.im2col(xp, 3, a)
    _pykernels.im2col(xp, 3, b)
    np.testing.assert_array_equal(a, b)
    d = rng.standard_normal(a.shape).astype(np.float32)
    da, db = np.zeros_like(xp), np.zeros_like(xp)
    cy.col2im(d, da, 3)
    _pykernels.col2im(d, db, 3)
    np.testing.assert_array_equal(da, db)
    la, lb = rng.random(700), rng.random(700)
    assert cy.order_flips(la, lb) == _pykernels.order_flips(la, lb)


@pytest.mark.parametrize("name", BACKENDS)
def test_order_flips_brute_force(name):
    be = kernels.get_backend(name)
    rng = np.random.default_rng(2)
    a = rng.integers(0, 5, 40).astype(np.float64)
    b = rng.integers(0, 5, 40).astype(np.float64)
    expect = sum((a[i] >= a[j]) != (b[i] >= b[j]) for i in range(40) for j in range(40))
    assert be.order_flips(a, b) == expect


def test_pure_python_env_switch():
    env = dict(os.environ, CWAN_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import cwan.kernels as k; print(k.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
