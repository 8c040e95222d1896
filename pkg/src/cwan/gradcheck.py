"""Finite-difference checks for every layer type and both networks.

Checks run in float64 on 8x8 inputs.  Zero-initialized heads are given
random weights first, otherwise every upstream gradient would vanish and
the comparison would be vacuous.
"""

from __future__ import annotations

import numpy as np

from .losses import huber_loss, l1_loss, masked_mse
from .model import CwanAB, CwanAbConfig, CwanL, CwanLConfig, ForwardBlock, MemoryBlock
from .nn import (
    Conv2d,
    add_residual,
    add_residual_backward,
    concat_channels,
    grad_check,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    split_channels,
)

TOLERANCE = 1e-3


def _randomize_zero(params, rng, scale=0.1):
    for p in params.values():
        if not np.any(p.data):
            p.data[...] = rng.standard_normal(p.shape) * scale


def _targets(params, *inputs):
    return [(p.data, p.grad) for p in params.values()] + list(inputs)


def check_conv(kernel, rng, h, n):
    conv = Conv2d(3, 4, kernel, rng=rng, dtype=np.float64)
    x = rng.standard_normal((1, 8, 8, 3))
    r = rng.standard_normal((1, 8, 8, 4))
    conv.forward(x)
    conv.weight.zero_grad()
    conv.bias.zero_grad()
    dx = conv.backward(r)
    return grad_check(lambda: float(np.sum(conv.forward(x, train=False) * r)), _targets(conv.parameters(), (x, dx)), h, n, int(rng.integers(1 << 31)))


def check_relu(rng, h, n):
    x = rng.uniform(0.1, 1.0, (1, 8, 8, 4)) * rng.choice([-1.0, 1.0], (1, 8, 8, 4))
    r = rng.standard_normal(x.shape)
    dx = relu_backward(r, x)
    return grad_check(lambda: float(np.sum(relu(x) * r)), [(x, dx)], h, n, int(rng.integers(1 << 31)))


def check_sigmoid(rng, h, n):
    x = rng.standard_normal((1, 8, 8, 2)) * 3
    r = rng.standard_normal(x.shape)
    dx = sigmoid_backward(r, sigmoid(x))
    return grad_check(lambda: float(np.sum(sigmoid(x) * r)), [(x, dx)], h, n, int(rng.integers(1 << 31)))


def check_concat(rng, h, n):
    a = rng.standard_normal((1, 8, 8, 2))
    b = rng.standard_normal((1, 8, 8, 3))
    r = rng.standard_normal((1, 8, 8, 5))
    da, db = split_channels(r, [2, 3])
    return grad_check(lambda: float(np.sum(concat_channels(a, b) ** 2 * r)), [(a, 2 * a * da), (b, 2 * b * db)], h, n, int(rng.integers(1 << 31)))


def check_residual(rng, h, n):
    a = rng.standard_normal((1, 8, 8, 3))
    b = rng.standard_normal((1, 8, 8, 3))
    r = rng.standard_normal(a.shape)
    da, db = add_residual_backward(r)
    return grad_check(lambda: float(np.sum(add_residual(a, b) * r)), [(a, da), (b, db)], h, n, int(rng.integers(1 << 31)))


def check_block(kind, rng, h, n, channels=8):
    cls = {"memory": MemoryBlock, "forward": ForwardBlock}[kind]
    blk = cls(2, channels, 3, rng, np.float64)
    history = [rng.uniform(0, 1, (1, 8, 8, channels)) for _ in range(2)]
    r = rng.standard_normal((1, 8, 8, channels))
    params = {}
    for name, conv in blk.convs().items():
        params[f"{name}.weight"] = conv.weight
        params[f"{name}.bias"] = conv.bias
        conv.bias.data[...] = rng.standard_normal(conv.bias.shape) * 0.1
    blk.forward(history)
    for p in params.values():
        p.zero_grad()
    grads = blk.backward(r)
    inputs = [(hh, g) for hh, g in zip(history, grads) if g is not None]
    return grad_check(lambda: float(np.sum(blk.forward(history, train=False) * r)), _targets(params, *inputs), h, n, int(rng.integers(1 << 31)))


def check_cwan_l(rng, h, n, channels=64):
    model = CwanL(CwanLConfig(channels=channels), seed=int(rng.integers(1 << 31)), dtype=np.float64)
    _randomize_zero(model.parameters(), rng)
    x = rng.uniform(0, 1, (1, 8, 8, 1))
    r = rng.standard_normal(x.shape)
    model.forward(x)
    model.zero_grad()
    dx = model.backward(r, need_input_grad=True)
    return grad_check(lambda: float(np.sum(model.forward(x) * r)), _targets(model.parameters(), (x, dx)), h, n, int(rng.integers(1 << 31)))


def check_cwan_ab(rng, h, n, channels=64, variant="full"):
    model = CwanAB(CwanAbConfig(channels=channels, variant=variant), seed=int(rng.integers(1 << 31)), dtype=np.float64)
    _randomize_zero(model.parameters(), rng)
    x = rng.uniform(0, 1, (1, 8, 8, 2))
    guide = rng.uniform(0, 1, (1, 8, 8, 2)) if variant in ("gt_map", "gt_points") else None
    r1 = rng.standard_normal(x.shape)
    r2 = rng.standard_normal(x.shape)
    x_hat, p_hat, _ = model.forward(x, guide)
    model.zero_grad()
    dx = model.backward(r1, r2 if p_hat is not None else None, need_input_grad=True)

    def f():
        x_hat, p_hat, _ = model.forward(x, guide)
        return float(np.sum(x_hat * r1) + (np.sum(p_hat * r2) if p_hat is not None else 0.0))

    return grad_check(f, _targets(model.parameters(), (x, dx)), h, n, int(rng.integers(1 << 31)))


def check_losses(rng, h, n):
    out = {}
    pred = rng.uniform(0, 1, (1, 8, 8, 2))
    target = rng.uniform(0, 1, pred.shape)
    _, g = l1_loss(pred, target)
    out["l1_loss"] = grad_check(lambda: l1_loss(pred, target)[0], [(pred, g)], h, n, int(rng.integers(1 << 31)))
    pred2 = target + rng.uniform(-1.0, 1.0, pred.shape)
    _, g = huber_loss(pred2, target, 0.5)
    out["huber_loss"] = grad_check(lambda: huber_loss(pred2, target, 0.5)[0], [(pred2, g)], h, n, int(rng.integers(1 << 31)))
    _, g = huber_loss(pred2, target, 0.5, "patch_sum")
    out["huber_patch_sum"] = grad_check(lambda: huber_loss(pred2, target, 0.5, "patch_sum")[0], [(pred2, g)], h, n, int(rng.integers(1 << 31)))
    pm = (rng.random((1, 8, 8)) < 0.3).astype(np.uint8)
    _, g = masked_mse(pred, target, pm)
    out["masked_mse"] = grad_check(lambda: masked_mse(pred, target, pm)[0], [(pred, g)], h, n, int(rng.integers(1 << 31)))
    return out


def run_all(seed=1, h=1e-3, n_coords=50, channels=64):
    """Run every check; returns ``{name: GradCheckResult}`` in a fixed order."""
    rng = np.random.default_rng(seed)
    results = {
        "conv3x3": check_conv(3, rng, h, n_coords),
        "conv1x1": check_conv(1, rng, h, n_coords),
        "relu": check_relu(rng, h, n_coords),
        "sigmoid": check_sigmoid(rng, h, n_coords),
        "concat_channels": check_concat(rng, h, n_coords),
        "add_residual": check_residual(rng, h, n_coords),
        "memory_block": check_block("memory", rng, h, n_coords),
        "forward_block": check_block("forward", rng, h, n_coords),
    }
    results.update(check_losses(rng, h, n_coords))
    results["cwan_l"] = check_cwan_l(rng, h, n_coords, channels)
    results["cwan_ab"] = check_cwan_ab(rng, h, n_coords, channels)
    for variant in ("colors", "gt_map", "gt_points"):
        results[f"cwan_ab_{variant}"] = check_cwan_ab(rng, h, n_coords, channels, variant)
    return results
