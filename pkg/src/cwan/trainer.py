"""Training loops for CWAN_L, generator pretraining and end-to-end CWAN_AB.

Every run is a pure function of (config, seed, patches): patch order, point
resampling and initialization draw from seed sequences keyed by
``(seed, purpose, epoch, index)``.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .attention import sample_attention_points
from .losses import LossConfig, cwan_ab_loss, l1_loss
from .metrics import masked_sse, neighborhood8, psnr, psnr_from_mse
from .model import CwanAB, CwanAbConfig, CwanL, CwanLConfig, enhance, input_guide
from .nn import AdamState, TrainingDivergence, adam_step

log = logging.getLogger(__name__)

ALPHA_SWEEP = (1.4, 1.2, 1.0, 0.8, 0.6, 0.4, 0.2, 0.0)
CURVE_COLUMNS = ("epoch", "total", "huber", "mse", "psnr_beta", "psnr_nbr")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.05
    batch_size: int = 16
    epochs: int = 200
    seed: int = 0
    max_steps: int = 0  # 0 = run all epochs
    loss: LossConfig = field(default_factory=LossConfig)
    diagnostics: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    def replace(self, **changes):
        loss_changes = {k: changes.pop(k) for k in ("alpha", "delta", "beta", "huber_reduction") if k in changes}
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        d["loss"] = LossConfig(**{**asdict(self.loss), **loss_changes})
        return TrainConfig(**d)

    def flat(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "loss"}
        d.update(asdict(self.loss))
        return d


_CONFIG_TYPES = {
    "lr": float,
    "weight_decay": float,
    "batch_size": int,
    "epochs": int,
    "seed": int,
    "max_steps": int,
    "alpha": float,
    "delta": float,
    "beta": int,
    "huber_reduction": str,
    "diagnostics": lambda v: {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}[v.lower()],
}


def parse_config(text, base=None):
    """Parse ``key = value`` lines (``#`` comments allowed) over ``base``."""
    base = base or TrainConfig()
    changes = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        try:
            changes[key] = _CONFIG_TYPES[key](value)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"line {n}: bad value {value!r} for {key}") from exc
    try:
        return base.replace(**changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def read_config(path, base=None):
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


def format_config(config):
    return "".join(f"{k} = {v}\n" for k, v in config.flat().items())


# ---------------------------------------------------------------------------
# bookkeeping


@dataclass
class EpochLog:
    epoch: int
    total: float
    huber: float = math.nan
    mse: float = math.nan
    psnr_beta: float = math.nan
    psnr_nbr: float = math.nan
    seconds: float = 0.0
    steps: int = 0


@dataclass
class TrainResult:
    model: object
    history: list[EpochLog]
    steps: int
    optimizer: AdamState | None = None


def write_curve(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for e in history:
            w.writerow([e.epoch, *(_fmt(getattr(e, c)) for c in CURVE_COLUMNS[1:])])


def _fmt(v):
    if math.isnan(v):
        return ""
    if math.isinf(v):
        return "inf"
    return repr(float(v))


def _seq(*key):
    return np.random.SeedSequence([int(k) for k in key])


def _batches(n, batch_size, seed, epoch):
    order = np.random.default_rng(_seq(seed, 7, epoch)).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _snapshot(params):
    return {k: v.data.copy() for k, v in params.items()}


def _restore(params, snap):
    for k, v in params.items():
        v.data = snap[k].copy()


class _Loop:
    """Shared epoch/step/divergence handling."""

    def __init__(self, params, config, name, state=None):
        self.params = params
        self.config = config
        self.name = name
        self.state = AdamState() if state is None else copy.deepcopy(state)
        self.steps = 0
        self.good = _snapshot(params)

    def done(self):
        return self.config.max_steps and self.steps >= self.config.max_steps

    def update(self, loss):
        if not math.isfinite(loss):
            self.diverge(f"non-finite loss {loss}")
        try:
            adam_step(self.params, self.state, self.config.lr, self.config.weight_decay)
        except TrainingDivergence as exc:
            self.diverge(str(exc))
        self.steps += 1

    def diverge(self, why):
        _restore(self.params, self.good)
        exc = TrainingDivergence(f"{self.name} diverged at step {self.steps}: {why}")
        exc.last_good = self.good
        raise exc

    def end_epoch(self, entry):
        self.good = _snapshot(self.params)
        log.info(
            "%s epoch %d steps %d total %.6f huber %s mse %s psnr_beta %s psnr_nbr %s (%.2fs)",
            self.name, entry.epoch, self.steps, entry.total, _fmt(entry.huber), _fmt(entry.mse),
            _fmt(entry.psnr_beta), _fmt(entry.psnr_nbr), entry.seconds,
        )


# ---------------------------------------------------------------------------
# phases


def train_cwan_l(patches, config: TrainConfig, model=None, model_config: CwanLConfig | None = None):
    """Minimize mean L1 between enhanced and ground-truth lightness."""
    model = model or CwanL(model_config, seed=int(_seq(config.seed, 1).generate_state(1)[0]))
    params = model.parameters()
    loop = _Loop(params, config, "cwan_l")
    x_all = patches.low_l[..., None]
    y_all = patches.gt_l[..., None]
    history = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for idx in _batches(len(patches), config.batch_size, config.seed, epoch):
            out = model.forward(x_all[idx])
            loss, g = l1_loss(out, y_all[idx])
            model.zero_grad()
            model.backward(g)
            loop.update(loss)
            total += loss * len(idx)
            count += len(idx)
            if loop.done():
                break
        entry = EpochLog(epoch, total / count, seconds=time.perf_counter() - t0, steps=loop.steps)
        history.append(entry)
        loop.end_epoch(entry)
        if loop.done():
            break
    return TrainResult(model, history, loop.steps, loop.state)


def pretrain_attention_generator(patches, config: TrainConfig, model=None, model_config: CwanAbConfig | None = None):
    """Fit the attention generator alone to the frequency-derived maps (L1)."""
    if patches.bundles is None:
        raise ValueError("pretraining needs patches extracted with attention bundles")
    model = model or CwanAB(model_config, seed=int(_seq(config.seed, 2).generate_state(1)[0]))
    if model.generator is None:
        raise ValueError(f"variant {model.config.variant!r} has no attention generator")
    params = model.generator_parameters()
    loop = _Loop(params, config, "attention")
    x_all, m_all = patches.low_ab, patches.maps
    history = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for idx in _batches(len(patches), config.batch_size, config.seed, epoch):
            m_hat = model.generator.forward(x_all[idx])
            loss, g = l1_loss(m_hat, m_all[idx])
            for p in params.values():
                p.zero_grad()
            model.generator.backward(g)
            loop.update(loss)
            total += loss * len(idx)
            count += len(idx)
            if loop.done():
                break
        entry = EpochLog(epoch, total / count, seconds=time.perf_counter() - t0, steps=loop.steps)
        history.append(entry)
        loop.end_epoch(entry)
        if loop.done():
            break
    return TrainResult(model, history, loop.steps, loop.state)


def epoch_points(maps, beta, seed, epoch):
    """Attention points for every patch, drawn with a per-(epoch, patch) seed."""
    masks, points = [], []
    for i, m in enumerate(maps):
        pm, p = sample_attention_points(m, beta, _seq(seed, 3, epoch, i))
        masks.append(pm)
        points.append(p)
    return np.stack(masks), np.stack(points)


def _guides(patches, variant, beta, seed):
    if variant not in ("gt_map", "gt_points"):
        return None
    return np.stack([input_guide(p, variant, beta, _seq(seed, 4, i)) for i, p in enumerate(patches.low)])


def train_cwan_ab(patches, config: TrainConfig, model: CwanAB, state: AdamState | None = None):
    """End-to-end color training: Huber on colors plus alpha times the point loss.

    ``model`` normally carries a pretrained generator, which is fine-tuned
    together with the enhancer.  Points are resampled every epoch.  Passing
    the ``optimizer`` of an earlier result as ``state`` continues its Adam
    moments (copied, so one state can seed several fine-tunes); a fresh Adam
    state makes its first step a full ``lr`` sign step on every parameter.
    """
    if patches.bundles is None:
        raise ValueError("CWAN_AB training needs patches extracted with attention bundles")
    cfg = config.loss
    params = model.parameters()
    loop = _Loop(params, config, "cwan_ab", state)
    x_all, y_all, maps = patches.low_ab, patches.gt_ab, patches.maps
    guides = _guides(patches, model.config.variant, cfg.beta, config.seed)
    history = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        pmask_all, pts_all = epoch_points(maps, cfg.beta, config.seed, epoch)
        sums = np.zeros(3)
        count = 0
        diag = [0.0, 0, 0.0, 0]
        for idx in _batches(len(patches), config.batch_size, config.seed, epoch):
            x_hat, p_hat, _ = model.forward(x_all[idx], None if guides is None else guides[idx])
            total, parts, gx, gp = cwan_ab_loss(x_hat, y_all[idx], p_hat, pts_all[idx], pmask_all[idx], cfg)
            if config.diagnostics:
                _accumulate_diag(diag, x_hat, y_all[idx], pmask_all[idx])
            model.zero_grad()
            model.backward(gx, gp)
            loop.update(total)
            sums += np.array([total, parts["huber"], parts["mse"]]) * len(idx)
            count += len(idx)
            if loop.done():
                break
        t, h, m = sums / count
        entry = EpochLog(epoch, t, h, m, seconds=time.perf_counter() - t0, steps=loop.steps)
        if config.diagnostics:
            entry.psnr_beta = psnr_from_mse(diag[0] / diag[1]) if diag[1] else math.nan
            entry.psnr_nbr = psnr_from_mse(diag[2] / diag[3]) if diag[3] else math.nan
        history.append(entry)
        loop.end_epoch(entry)
        if loop.done():
            break
    return TrainResult(model, history, loop.steps, loop.state)


def _accumulate_diag(diag, x_hat, y, pmask):
    nbr = np.stack([neighborhood8(m) for m in pmask])
    s, n = masked_sse(x_hat, y, pmask.astype(bool))
    diag[0] += s
    diag[1] += n
    s, n = masked_sse(x_hat, y, nbr)
    diag[2] += s
    diag[3] += n


# ---------------------------------------------------------------------------
# evaluation and sweeps


def evaluate_pairs(l_model, ab_model, pairs):
    """Mean end-to-end PSNR of enhanced low-light images against ground truth."""
    return float(np.mean([psnr(enhance(low, l_model, ab_model), gt) for low, gt in pairs]))


def copy_ab(model):
    clone = CwanAB(model.config)
    clone.load_state_dict(model.state_dict())
    return clone


def alpha_sweep(patches, config, pretrained, l_model, eval_pairs, alphas=ALPHA_SWEEP, mode="cold", finetune_epochs=5):
    """Train one CWAN_AB per alpha and report end-to-end PSNR on ``eval_pairs``.

    ``mode="cold"`` trains each alpha from the pretrained generator for the
    full schedule.  ``mode="warm"`` trains an alpha=1 model first and then
    fine-tunes a copy of it for ``finetune_epochs`` per alpha, continuing
    the alpha=1 run's optimizer moments.
    """
    if mode not in ("cold", "warm"):
        raise ValueError("mode must be 'cold' or 'warm'")
    rows = []
    base = None
    if mode == "warm":
        base = train_cwan_ab(patches, config.replace(alpha=1.0), copy_ab(pretrained))
    for a in alphas:
        if mode == "cold":
            model = train_cwan_ab(patches, config.replace(alpha=a), copy_ab(pretrained)).model
        else:
            model = train_cwan_ab(
                patches, config.replace(alpha=a, epochs=finetune_epochs, max_steps=0), copy_ab(base.model),
                base.optimizer,
            ).model
        rows.append({"alpha": a, "psnr": evaluate_pairs(l_model, model, eval_pairs)})
        log.info("alpha %.2f psnr %.4f", a, rows[-1]["psnr"])
    return rows
