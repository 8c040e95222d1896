"""Minimal layer engine with hand-written backward passes.

Feature maps are channels-last batches, ``(N, H, W, C)``.  Convolutions are
stride 1 with "same" padding and run as im2col + one GEMM, so the only hot
loops outside BLAS are the window gather/scatter in :mod:`cwan.kernels`.

The dtype of a network follows its parameters: float32 for training and
inference, float64 for finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class ContractError(ValueError):
    """Raised when arrays handed to an operation have incompatible shapes."""


class TrainingDivergence(FloatingPointError):
    """Raised when a loss or gradient becomes non-finite."""


@dataclass
class Tensor:
    """A named parameter array with an accumulated gradient buffer."""

    data: np.ndarray
    grad: np.ndarray | None = None
    decay: bool = True

    def __post_init__(self):
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise ContractError(f"grad shape {self.grad.shape} != data shape {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g


# ---------------------------------------------------------------------------
# convolution


def conv2d_forward(x, weight, bias):
    """Stride-1 "same" convolution.

    Parameters
    ----------
    x : ndarray, shape (N, H, W, C_in)
    weight : ndarray, shape (C_out, C_in, k, k), k odd
    bias : ndarray, shape (C_out,)

    Returns
    -------
    y : ndarray, shape (N, H, W, C_out)
    cache : tuple
        State needed by :func:`conv2d_backward`.
    """
    if x.ndim != 4:
        raise ContractError(f"expected (N, H, W, C) input, got shape {x.shape}")
    n, h, w, cin = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin or k != k2 or k % 2 == 0:
        raise ContractError(f"input with {cin} channels does not fit kernel {weight.shape}")
    x = np.ascontiguousarray(x, dtype=weight.dtype)
    if k == 1:
        cols = x.reshape(n * h * w, cin)
    else:
        p = (k - 1) // 2
        xp = np.zeros((n, h + 2 * p, w + 2 * p, cin), dtype=x.dtype)
        xp[:, p:p + h, p:p + w, :] = x
        cols = np.empty((n * h * w, k * k * cin), dtype=x.dtype)
        kernels.im2col(xp, k, cols)
    wmat = weight.transpose(0, 2, 3, 1).reshape(cout, k * k * cin)
    y = cols @ wmat.T
    y += bias
    return y.reshape(n, h, w, cout), (cols, x.shape, weight)


def conv2d_backward(dy, cache, need_input_grad=True):
    """Gradients of :func:`conv2d_forward`; returns ``(dx, dweight, dbias)``."""
    cols, xshape, weight = cache
    n, h, w, cin = xshape
    cout, _, k, _ = weight.shape
    if dy.shape != (n, h, w, cout):
        raise ContractError(f"output grad {dy.shape} does not match {(n, h, w, cout)}")
    dy2 = np.ascontiguousarray(dy, dtype=weight.dtype).reshape(n * h * w, cout)
    dweight = (dy2.T @ cols).reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
    dbias = dy2.sum(axis=0)
    if not need_input_grad:
        return None, dweight, dbias
    wmat = weight.transpose(0, 2, 3, 1).reshape(cout, k * k * cin)
    dcols = dy2 @ wmat
    if k == 1:
        return dcols.reshape(xshape), dweight, dbias
    p = (k - 1) // 2
    dxp = np.zeros((n, h + 2 * p, w + 2 * p, cin), dtype=dcols.dtype)
    kernels.col2im(dcols, dxp, k)
    return np.ascontiguousarray(dxp[:, p:p + h, p:p + w, :]), dweight, dbias


class Conv2d:
    """Convolution layer owning its weight and bias tensors.

    Weights are He-normal (std ``sqrt(2 / fan_in)``) unless ``zero_init``;
    biases start at zero.  ``forward`` keeps the im2col buffer for the next
    ``backward``, so one layer instance serves one sample batch at a time.
    """

    def __init__(self, cin, cout, kernel=3, *, rng=None, zero_init=False, dtype=np.float32):
        if kernel % 2 == 0:
            raise ContractError(f"kernel size must be odd, got {kernel}")
        shape = (cout, cin, kernel, kernel)
        if zero_init:
            w = np.zeros(shape, dtype=dtype)
        else:
            rng = np.random.default_rng() if rng is None else rng
            w = (rng.standard_normal(shape) * np.sqrt(2.0 / (cin * kernel * kernel))).astype(dtype)
        self.weight = Tensor(w)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), decay=False)
        self.kernel = kernel
        self._cache = None

    @property
    def cin(self):
        return self.weight.shape[1]

    @property
    def cout(self):
        return self.weight.shape[0]

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, train=True):
        y, cache = conv2d_forward(x, self.weight.data, self.bias.data)
        self._cache = cache if train else None
        return y

    def backward(self, dy, need_input_grad=True):
        if self._cache is None:
            raise RuntimeError("backward called without a cached training forward pass")
        dx, dw, db = conv2d_backward(dy, self._cache, need_input_grad)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        self._cache = None
        return dx


# ---------------------------------------------------------------------------
# pointwise and structural ops


_relu_trace: list | None = None


def relu(x):
    if _relu_trace is not None:
        _relu_trace.append(hash((x > 0).tobytes()))
    return np.maximum(x, 0)


def relu_backward(dy, x):
    """Gradient of ReLU; ``x`` may be the input or the output (same sign pattern)."""
    return dy * (x > 0)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dy, y):
    return dy * y * (1 - y)


def concat_channels(*arrays):
    """Stack feature maps along the channel axis (last)."""
    base = arrays[0].shape[:-1]
    for a in arrays[1:]:
        if a.shape[:-1] != base:
            raise ContractError(f"cannot concatenate {a.shape} with leading dims {base}")
    return np.concatenate(arrays, axis=-1)


def split_channels(grad, sizes: Sequence[int]):
    """Backward of :func:`concat_channels`: slice ``grad`` back into pieces."""
    if sum(sizes) != grad.shape[-1]:
        raise ContractError(f"channel sizes {list(sizes)} do not sum to {grad.shape[-1]}")
    bounds = np.cumsum([0, *sizes])
    return [grad[..., a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def add_residual(branch, skip):
    if branch.shape != skip.shape:
        raise ContractError(f"residual shapes differ: {branch.shape} vs {skip.shape}")
    return branch + skip


def add_residual_backward(dy):
    """Both addends receive the upstream gradient unchanged."""
    return dy, dy


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update over ``params`` (name -> :class:`Tensor`) in place.

    ``weight_decay * data`` is added to the gradient of every tensor whose
    ``decay`` flag is set.  All gradients are checked for finiteness before
    any parameter changes.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
        if not np.all(np.isfinite(p.grad)):
            raise TrainingDivergence(f"non-finite gradient in {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = p.grad
        if weight_decay and p.decay:
            g = g + p.data.dtype.type(weight_decay) * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data -= step.astype(p.data.dtype, copy=False)


def zero_grads(params):
    for p in params.values():
        p.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking


def relative_error(analytic, numeric, floor=1e-7):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _traced(loss_fn):
    global _relu_trace
    _relu_trace = []
    try:
        value = loss_fn()
        return value, tuple(_relu_trace)
    finally:
        _relu_trace = None


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int

    def __float__(self):
        return float(self.max_rel_error)


def grad_check(
    loss_fn: Callable[[], float],
    targets: Iterable[tuple[np.ndarray, np.ndarray]],
    h: float = 1e-3,
    n_coords: int = 50,
    seed: int = 0,
    max_draws: int | None = None,
) -> GradCheckResult:
    """Compare analytic gradients against central differences.

    ``targets`` pairs each array that ``loss_fn`` reads with its analytic
    gradient.  Coordinates are drawn at random (weighted by array size);
    each is nudged by ``+-h`` in place and restored afterwards.

    A coordinate whose nudges flip the sign of any ReLU input is redrawn:
    the central difference straddles a kink there and says nothing about
    the derivative.  ``skipped`` counts those redraws.
    """
    targets = [(a, np.asarray(g)) for a, g in targets]
    sizes = np.array([a.size for a, _ in targets], dtype=float)
    rng = np.random.default_rng(seed)
    max_draws = 20 * n_coords if max_draws is None else max_draws
    _, base = _traced(loss_fn)
    worst, checked, skipped = 0.0, 0, 0
    while checked < n_coords and checked + skipped < max_draws:
        t = rng.choice(len(targets), p=sizes / sizes.sum())
        arr, grad = targets[t]
        idx = np.unravel_index(rng.integers(arr.size), arr.shape)
        orig = arr[idx]
        arr[idx] = orig + h
        up, sig_up = _traced(loss_fn)
        arr[idx] = orig - h
        down, sig_down = _traced(loss_fn)
        arr[idx] = orig
        if sig_up != base or sig_down != base:
            skipped += 1
            continue
        checked += 1
        numeric = (up - down) / (2 * h)
        worst = max(worst, relative_error(float(grad[idx]), numeric))
    return GradCheckResult(worst, checked, skipped)
