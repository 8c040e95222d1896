"""CWAN_L (lightness) and CWAN_AB (attention generator + color enhancer).

Both are fully convolutional: a feature-extraction conv, a stack of blocks,
and a reconstruction conv.  Memory blocks carry short skips inside each
recursive unit and dense long skips into a 1x1 gate; forward blocks are a
plain 3x3 / 1x1 / 3x3 chain.  Either block type can be used in either
network, which is how the block-type ablation is run.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import checkpoint
from .attention import BETA, attention_map, color_frequency, frequency_mask, sample_attention_points, thresholds
from .colorspace import lab_to_rgb, rgb_to_lab
from .nn import (
    Conv2d,
    ContractError,
    concat_channels,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    split_channels,
)

BLOCK_TYPES = ("memory", "forward")
AB_VARIANTS = ("full", "colors", "gt_map", "gt_points")


@dataclass
class CwanLConfig:
    memory_blocks: int = 3
    channels: int = 64
    kernel: int = 3
    block_type: str = "memory"

    def __post_init__(self):
        _check_block_type(self.block_type)


@dataclass
class CwanAbConfig:
    generator_blocks: int = 1
    enhancer_blocks: int = 2
    channels: int = 64
    kernel: int = 3
    block_type: str = "forward"
    variant: str = "full"

    def __post_init__(self):
        _check_block_type(self.block_type)
        if self.variant not in AB_VARIANTS:
            raise ValueError(f"variant must be one of {AB_VARIANTS}, got {self.variant!r}")

    @property
    def has_generator(self):
        return self.variant == "full"

    @property
    def has_point_head(self):
        return self.variant != "colors"

    @property
    def enhancer_inputs(self):
        return 2 if self.variant == "colors" else 4


def _check_block_type(block_type):
    if block_type not in BLOCK_TYPES:
        raise ValueError(f"block_type must be one of {BLOCK_TYPES}, got {block_type!r}")


def _config_from_dict(cls, d):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise checkpoint.CheckpointError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**d)


# ---------------------------------------------------------------------------
# blocks


class MemoryBlock:
    """Two residual conv+ReLU units and a 1x1 gate over the long-term memory.

    The m-th block (1-based) gates ``concat(B_1..B_{m-1}, B_0, u_1, u_2)``
    where ``B_0`` is the feature-extraction output.
    """

    def __init__(self, index, channels, kernel, rng, dtype):
        self.index = index
        self.unit1 = Conv2d(channels, channels, kernel, rng=rng, dtype=dtype)
        self.unit2 = Conv2d(channels, channels, kernel, rng=rng, dtype=dtype)
        self.gate = Conv2d((index + 2) * channels, channels, 1, rng=rng, dtype=dtype)
        self.channels = channels

    def convs(self):
        return {"unit1": self.unit1, "unit2": self.unit2, "gate": self.gate}

    def forward(self, history, train=True):
        h = history[-1]
        a1 = relu(self.unit1.forward(h, train))
        u1 = a1 + h
        a2 = relu(self.unit2.forward(u1, train))
        u2 = a2 + u1
        out = relu(self.gate.forward(concat_channels(*history[1:], history[0], u1, u2), train))
        if train:
            self._saved = (a1, a2, out)
        return out

    def backward(self, dout):
        """Returns gradients for every entry of the ``history`` list."""
        a1, a2, out = self._saved
        self._saved = None
        c = self.channels
        pieces = split_channels(self.gate.backward(relu_backward(dout, out)), [c] * (self.index + 2))
        d_hist = [pieces[self.index - 1]] + list(pieces[: self.index - 1])
        du1, du2 = pieces[-2], pieces[-1]
        du1 = du1 + du2 + self.unit2.backward(relu_backward(du2, a2))
        dh = du1 + self.unit1.backward(relu_backward(du1, a1))
        d_hist[-1] = d_hist[-1] + dh
        return d_hist


class ForwardBlock:
    """3x3 conv+ReLU, 1x1 conv+ReLU, 3x3 conv+ReLU; no skips."""

    def __init__(self, index, channels, kernel, rng, dtype):
        self.index = index
        self.conv1 = Conv2d(channels, channels, kernel, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.conv3 = Conv2d(channels, channels, kernel, rng=rng, dtype=dtype)

    def convs(self):
        return {"conv1": self.conv1, "conv2": self.conv2, "conv3": self.conv3}

    def forward(self, history, train=True):
        a1 = relu(self.conv1.forward(history[-1], train))
        a2 = relu(self.conv2.forward(a1, train))
        a3 = relu(self.conv3.forward(a2, train))
        if train:
            self._saved = (a1, a2, a3)
        return a3

    def backward(self, dout):
        a1, a2, a3 = self._saved
        self._saved = None
        d = self.conv3.backward(relu_backward(dout, a3))
        d = self.conv2.backward(relu_backward(d, a2))
        d = self.conv1.backward(relu_backward(d, a1))
        grads = [None] * self.index
        grads[-1] = d
        return grads


_BLOCKS = {"memory": MemoryBlock, "forward": ForwardBlock}


class Trunk:
    """Feature extraction conv+ReLU followed by ``n_blocks`` blocks."""

    def __init__(self, cin, channels, n_blocks, block_type, kernel, rng, dtype):
        self.fext = Conv2d(cin, channels, kernel, rng=rng, dtype=dtype)
        cls = _BLOCKS[block_type]
        self.blocks = [cls(i + 1, channels, kernel, rng, dtype) for i in range(n_blocks)]

    def convs(self):
        out = {"fext": self.fext}
        for i, blk in enumerate(self.blocks):
            out.update({f"block{i}.{k}": v for k, v in blk.convs().items()})
        return out

    def forward(self, x, train=True):
        b0 = relu(self.fext.forward(x, train))
        history = [b0]
        for blk in self.blocks:
            history.append(blk.forward(history, train))
        if train:
            self._b0 = b0
        return history[-1]

    def backward(self, dfeat, need_input_grad=False):
        grads = [None] * (len(self.blocks) + 1)
        grads[-1] = dfeat
        for m in range(len(self.blocks), 0, -1):
            d_hist = self.blocks[m - 1].backward(grads[m])
            for j, g in enumerate(d_hist):
                if g is not None:
                    grads[j] = g if grads[j] is None else grads[j] + g
        b0, self._b0 = self._b0, None
        return self.fext.backward(relu_backward(grads[0], b0), need_input_grad)


class _Network:
    def convs(self):
        raise NotImplementedError

    def parameters(self):
        params = {}
        for name, conv in self.convs().items():
            params[f"{name}.weight"] = conv.weight
            params[f"{name}.bias"] = conv.bias
        return params

    def state_dict(self):
        return {k: v.data for k, v in self.parameters().items()}

    def load_state_dict(self, tensors, strict=True):
        params = self.parameters()
        if strict and set(tensors) != set(params):
            missing = sorted(set(params) - set(tensors))
            extra = sorted(set(tensors) - set(params))
            raise checkpoint.CheckpointError(f"architecture mismatch: missing {missing}, unexpected {extra}")
        for name, arr in tensors.items():
            if name not in params:
                continue
            if params[name].shape != arr.shape:
                raise checkpoint.CheckpointError(f"{name}: shape {arr.shape} != expected {params[name].shape}")
            params[name].data = np.array(arr, dtype=params[name].data.dtype)

    def astype(self, dtype):
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def conv_layer_count(self):
        return len(self.convs())


# ---------------------------------------------------------------------------
# networks


class CwanL(_Network):
    """Lightness network: ``x_hat = x + f_rec(trunk(x))``."""

    kind = "cwan_l"

    def __init__(self, config=None, seed=0, dtype=np.float32):
        self.config = config or CwanLConfig()
        rng = np.random.default_rng(seed)
        c = self.config
        self.trunk = Trunk(1, c.channels, c.memory_blocks, c.block_type, c.kernel, rng, dtype)
        self.rec = Conv2d(c.channels, 1, c.kernel, zero_init=True, dtype=dtype)

    def convs(self):
        return {**{f"trunk.{k}": v for k, v in self.trunk.convs().items()}, "rec": self.rec}

    def forward(self, x, train=True):
        """``x``: (N, H, W, 1) lightness.  Output is clamped to [0, 1] only when ``train`` is False."""
        out = x + self.rec.forward(self.trunk.forward(x, train), train)
        return out if train else np.clip(out, 0.0, 1.0)

    def backward(self, dout, need_input_grad=False):
        dx = self.trunk.backward(self.rec.backward(dout), need_input_grad)
        return dout + dx if need_input_grad else None

    def descriptor(self):
        return {"kind": self.kind, "config": asdict(self.config)}


class AttentionGenerator(_Network):
    """Two-channel attention map ``sigmoid(f_rec(trunk(x_ab)))``."""

    def __init__(self, config, rng, dtype):
        c = config
        self.trunk = Trunk(2, c.channels, c.generator_blocks, c.block_type, c.kernel, rng, dtype)
        self.rec = Conv2d(c.channels, 2, c.kernel, rng=rng, dtype=dtype)

    def convs(self):
        return {**{f"trunk.{k}": v for k, v in self.trunk.convs().items()}, "rec": self.rec}

    def forward(self, x_ab, train=True):
        m_hat = sigmoid(self.rec.forward(self.trunk.forward(x_ab, train), train))
        if train:
            self._m_hat = m_hat
        return m_hat

    def backward(self, dm_hat, need_input_grad=False):
        m_hat, self._m_hat = self._m_hat, None
        return self.trunk.backward(self.rec.backward(sigmoid_backward(dm_hat, m_hat)), need_input_grad)


class ColorEnhancer(_Network):
    """Residual color head plus a 1x1 attention-point head on the same features."""

    def __init__(self, config, rng, dtype):
        c = config
        self.trunk = Trunk(c.enhancer_inputs, c.channels, c.enhancer_blocks, c.block_type, c.kernel, rng, dtype)
        self.rec = Conv2d(c.channels, 2, c.kernel, zero_init=True, dtype=dtype)
        self.point_head = Conv2d(c.channels, 2, 1, zero_init=True, dtype=dtype) if c.has_point_head else None

    def convs(self):
        out = {f"trunk.{k}": v for k, v in self.trunk.convs().items()}
        out["rec"] = self.rec
        if self.point_head is not None:
            out["point_head"] = self.point_head
        return out

    def conv_layer_count(self):
        return len(self.trunk.convs()) + 1

    def forward(self, x_in, train=True):
        feat = self.trunk.forward(x_in, train)
        residual = self.rec.forward(feat, train)
        p_hat = self.point_head.forward(feat, train) if self.point_head is not None else None
        return residual, p_hat

    def backward(self, dresidual, dp_hat=None, need_input_grad=True):
        dfeat = self.rec.backward(dresidual)
        if self.point_head is not None:
            if dp_hat is None:
                dp_hat = np.zeros(dresidual.shape[:-1] + (2,), dtype=dresidual.dtype)
            dfeat = dfeat + self.point_head.backward(dp_hat)
        return self.trunk.backward(dfeat, need_input_grad)


class CwanAB(_Network):
    """Color network.

    ``forward`` returns ``(x_hat_ab, p_hat, m_hat)``.  In the ``full``
    variant ``m_hat`` comes from the attention generator; ``gt_map`` and
    ``gt_points`` take a precomputed two-channel guide instead, and
    ``colors`` uses the color channels alone (no point head).
    """

    kind = "cwan_ab"

    def __init__(self, config=None, seed=0, dtype=np.float32):
        self.config = config or CwanAbConfig()
        rng = np.random.default_rng(seed)
        self.generator = AttentionGenerator(self.config, rng, dtype) if self.config.has_generator else None
        self.enhancer = ColorEnhancer(self.config, rng, dtype)

    def convs(self):
        out = {}
        if self.generator is not None:
            out.update({f"generator.{k}": v for k, v in self.generator.convs().items()})
        out.update({f"enhancer.{k}": v for k, v in self.enhancer.convs().items()})
        return out

    def generator_parameters(self):
        if self.generator is None:
            return {}
        return {f"generator.{k}": v for k, v in self.generator.parameters().items()}

    def layer_counts(self):
        gen = self.generator.conv_layer_count() if self.generator is not None else 0
        return gen, self.enhancer.conv_layer_count()

    def forward(self, x_ab, guide=None, train=True):
        cfg = self.config
        if cfg.has_generator:
            guide = self.generator.forward(x_ab, train)
        elif cfg.variant != "colors" and guide is None:
            raise ContractError(f"variant {cfg.variant!r} needs a guide input")
        x_in = x_ab if cfg.variant == "colors" else concat_channels(x_ab, guide.astype(x_ab.dtype, copy=False))
        residual, p_hat = self.enhancer.forward(x_in, train)
        out = x_ab + residual
        if not train:
            out = np.clip(out, 0.0, 1.0)
        return out, p_hat, (guide if cfg.variant != "colors" else None)

    def backward(self, dout, dp_hat=None, need_input_grad=False):
        cfg = self.config
        d_in = self.enhancer.backward(dout, dp_hat, need_input_grad=cfg.has_generator or need_input_grad)
        dx = dout if need_input_grad else None
        if d_in is None:
            return dx
        if cfg.variant == "colors":
            return dx + d_in if need_input_grad else None
        d_x, d_guide = split_channels(d_in, [2, 2])
        if need_input_grad:
            dx = dx + d_x
        if cfg.has_generator:
            dg = self.generator.backward(d_guide, need_input_grad)
            if need_input_grad:
                dx = dx + dg
        return dx

    def descriptor(self):
        return {"kind": self.kind, "config": asdict(self.config)}


# ---------------------------------------------------------------------------
# checkpoints


def save_model(path, model, extra=None):
    desc = model.descriptor()
    if extra:
        desc.update(extra)
    checkpoint.save(path, desc, model.state_dict())


def load_model(path, kind=None):
    """Rebuild a :class:`CwanL` or :class:`CwanAB` from a checkpoint file."""
    desc, tensors = checkpoint.load(path)
    found = desc.get("kind")
    if kind is not None and found != kind:
        raise checkpoint.CheckpointError(f"{path}: expected a {kind} checkpoint, found {found!r}")
    if found == CwanL.kind:
        model = CwanL(_config_from_dict(CwanLConfig, desc["config"]))
    elif found in (CwanAB.kind, "attention_generator"):
        model = CwanAB(_config_from_dict(CwanAbConfig, desc["config"]))
    else:
        raise checkpoint.CheckpointError(f"{path}: unknown model kind {found!r}")
    if found == "attention_generator":
        expected = set(model.generator_parameters())
        if set(tensors) != expected:
            raise checkpoint.CheckpointError(f"{path}: generator tensors do not match the configuration")
        model.load_state_dict(tensors, strict=False)
    else:
        model.load_state_dict(tensors)
    return model, desc


def save_generator(path, model):
    desc = {"kind": "attention_generator", "config": asdict(model.config)}
    checkpoint.save(path, desc, {k: v.data for k, v in model.generator_parameters().items()})


# ---------------------------------------------------------------------------
# pipeline


def input_guide(rgb, variant, beta=BETA, seed=0):
    """Guide channels for the ``gt_map``/``gt_points`` variants, computed from the input colors."""
    _, ab = rgb_to_lab(rgb)
    freq = color_frequency(rgb)
    m = attention_map(ab, frequency_mask(freq, *thresholds(freq.size)))
    if variant == "gt_map":
        return m
    _, points = sample_attention_points(m, beta, seed)
    return points


def enhance(img, l_model, ab_model, seed=0):
    """Enhance one sRGB image of shape (H, W, 3); returns float32 sRGB in [0, 1]."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ContractError(f"expected an (H, W, 3) image, got {img.shape}")
    lightness, ab = rgb_to_lab(img)
    l_hat = l_model.forward(lightness[None, :, :, None], train=False)[0, :, :, 0]
    guide = None
    if ab_model.config.variant in ("gt_map", "gt_points"):
        guide = input_guide(img, ab_model.config.variant, seed=seed)[None]
    ab_hat, _, _ = ab_model.forward(ab[None], guide, train=False)
    return lab_to_rgb(l_hat, ab_hat[0])


def predict_attention(img, ab_model):
    """Generator output ``m_hat`` (H, W, 2) for an sRGB image."""
    if ab_model.generator is None:
        raise ContractError(f"variant {ab_model.config.variant!r} has no attention generator")
    _, ab = rgb_to_lab(np.asarray(img, dtype=np.float32))
    return ab_model.generator.forward(ab[None], train=False)[0]
