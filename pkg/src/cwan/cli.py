"""``cwan`` command-line tool.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Diagnostics go to stderr; results go to files and stdout.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import attention, data, gradcheck, metrics, model, trainer
from .checkpoint import CheckpointError
from .nn import ContractError, TrainingDivergence

log = logging.getLogger("cwan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared flag groups


def _train_flags(p, batch_size, patch_size, per_image):
    g = p.add_argument_group("training")
    g.add_argument("--config", type=Path, help="key = value file with TrainConfig fields")
    g.add_argument("--lr", type=float, help="learning rate (default: 1e-4)")
    g.add_argument("--weight-decay", type=float, help="L2 coefficient on weights (default: 0.05)")
    g.add_argument("--batch-size", type=int, help=f"patches per step (default: {batch_size})")
    g.add_argument("--epochs", type=int, help="passes over the patch set (default: 200)")
    g.add_argument("--max-steps", type=int, help="stop after this many updates, 0 = no limit (default: 0)")
    g.add_argument("--seed", type=int, help="random seed (default: 0)")
    g.add_argument("--patch-size", type=int, default=patch_size, help=f"patch side in pixels (default: {patch_size})")
    g.add_argument("--per-image", type=int, default=per_image, help=f"patches per training image (default: {per_image})")
    g.add_argument("--log", type=Path, help="write the per-epoch loss curve CSV here")
    p.set_defaults(_batch_size=batch_size)


def _attention_flags(p):
    g = p.add_argument_group("attention")
    g.add_argument("--beta", type=int, help="attention points per patch (default: 20)")
    g.add_argument("--tau-low-frac", type=float, default=attention.TAU_LOW_FRAC, help="lower frequency threshold as a fraction of N (default: 0.05)")
    g.add_argument("--tau-high-frac", type=float, default=attention.TAU_HIGH_FRAC, help="upper frequency threshold as a fraction of N (default: 0.5)")
    g.add_argument("--attention-source", choices=("gt", "low"), default="gt", help="patch the attention targets are computed from (default: gt)")


def _ab_arch_flags(p):
    g = p.add_argument_group("CWAN_AB architecture")
    g.add_argument("--generator-blocks", type=int, default=1, help="blocks in the attention generator (default: 1)")
    g.add_argument("--enhancer-blocks", type=int, default=2, help="blocks in the color enhancer (default: 2)")
    g.add_argument("--channels", type=int, default=64, help="feature maps per layer (default: 64)")
    g.add_argument("--block-type", choices=model.BLOCK_TYPES, default="forward", help="block type (default: forward)")
    g.add_argument("--variant", choices=model.AB_VARIANTS, default="full", help="architecture variant (default: full)")


def _loss_flags(p):
    g = p.add_argument_group("loss")
    g.add_argument("--alpha", type=float, help="weight of the attention-point loss (default: 1.0)")
    g.add_argument("--delta", type=float, help="Huber threshold (default: 0.5)")
    g.add_argument("--huber-reduction", choices=("patch_sum", "mean"), help="Huber sum per patch or mean per element (default: patch_sum)")
    g.add_argument("--diagnostics", action="store_true", help="log point / neighborhood PSNR every epoch")


def _train_config(args):
    base = trainer.TrainConfig(batch_size=args._batch_size)
    if args.config is not None:
        base = trainer.read_config(args.config, base)
    changes = {}
    for flag in ("lr", "weight_decay", "batch_size", "epochs", "max_steps", "seed", "alpha", "delta", "beta", "huber_reduction"):
        v = getattr(args, flag, None)
        if v is not None:
            changes[flag] = v
    if getattr(args, "diagnostics", False):
        changes["diagnostics"] = True
    return base.replace(**changes)


def _patches(args, config, with_attention):
    ds = data.read_manifest(args.manifest)
    pairs = data.load_pairs(ds, "train")
    if not pairs:
        raise data.DataError(f"{args.manifest}: no training images")
    kw = {}
    if with_attention:
        kw = dict(
            beta=config.loss.beta,
            source=args.attention_source,
            tau_low_frac=args.tau_low_frac,
            tau_high_frac=args.tau_high_frac,
        )
    return data.extract_patches(pairs, args.patch_size, args.per_image, config.seed, with_attention, **kw)


def _ab_config(args):
    return model.CwanAbConfig(
        generator_blocks=args.generator_blocks,
        enhancer_blocks=args.enhancer_blocks,
        channels=args.channels,
        block_type=args.block_type,
        variant=args.variant,
    )


def _finish(result, args, save):
    save(result.model)
    if args.log is not None:
        trainer.write_curve(args.log, result.history)
    print(f"{args.out}\tsteps={result.steps}\tfinal_loss={result.history[-1].total:.6f}")


def _on_divergence(exc, out, save):
    last = getattr(exc, "last_good", None)
    if last is not None and out is not None:
        save(last)
        log.error("wrote last good parameters to %s", out)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    if args.input is None and not args.toy:
        raise UsageError("synth needs --in DIR or --toy N")
    if args.input is not None:
        sources = data.list_images(args.input)
        if not sources:
            raise data.DataError(f"no .png/.ppm images in {args.input}")
    else:
        rng = np.random.default_rng(args.seed)
        sources = [(f"toy{i:04d}", data.toy_scene(args.size, rng)) for i in range(args.toy)]
    ds, manifest = data.synthesize_dataset(
        sources, args.out, args.decrease, args.sigma, args.seed, args.val_frac, args.test_frac, args.domain
    )
    print(manifest)
    return EXIT_OK


def cmd_train_l(args):
    config = _train_config(args)
    patches = _patches(args, config, with_attention=False)
    lcfg = model.CwanLConfig(memory_blocks=args.memory_blocks, channels=args.channels, block_type=args.block_type)
    net = model.CwanL(lcfg, seed=config.seed)

    def save(m):
        if isinstance(m, dict):
            net.load_state_dict(m)
            m = net
        model.save_model(args.out, m)

    try:
        result = trainer.train_cwan_l(patches, config, net)
    except TrainingDivergence as exc:
        _on_divergence(exc, args.out, save)
        raise
    _finish(result, args, save)
    return EXIT_OK


def cmd_pretrain_attn(args):
    config = _train_config(args)
    abcfg = _ab_config(args)
    if not abcfg.has_generator:
        raise UsageError(f"variant {abcfg.variant!r} has no attention generator to pretrain")
    patches = _patches(args, config, with_attention=True)
    net = model.CwanAB(abcfg, seed=config.seed)

    def save(m):
        if isinstance(m, dict):
            net.load_state_dict(m, strict=False)
            m = net
        model.save_generator(args.out, m)

    try:
        result = trainer.pretrain_attention_generator(patches, config, net)
    except TrainingDivergence as exc:
        _on_divergence(exc, args.out, save)
        raise
    _finish(result, args, save)
    return EXIT_OK


def _load_pretrained(args, seed):
    abcfg = _ab_config(args)
    net = model.CwanAB(abcfg, seed=seed)
    if args.pretrained is None:
        if abcfg.has_generator:
            raise UsageError(f"variant {abcfg.variant!r} needs --pretrained (run pretrain-attn first)")
        return net
    if not abcfg.has_generator:
        raise UsageError(f"variant {abcfg.variant!r} has no attention generator; drop --pretrained")
    pre, _ = model.load_model(args.pretrained, kind=None)
    tensors = {k: v.data for k, v in pre.generator_parameters().items()}
    if set(tensors) != set(net.generator_parameters()):
        raise CheckpointError(f"{args.pretrained}: generator does not match the requested architecture")
    net.load_state_dict(tensors, strict=False)
    return net


def cmd_train_ab(args):
    config = _train_config(args)
    net = _load_pretrained(args, config.seed)
    patches = _patches(args, config, with_attention=True)

    def save(m):
        if isinstance(m, dict):
            net.load_state_dict(m)
            m = net
        model.save_model(args.out, m)

    try:
        result = trainer.train_cwan_ab(patches, config, net)
    except TrainingDivergence as exc:
        _on_divergence(exc, args.out, save)
        raise
    _finish(result, args, save)
    return EXIT_OK


def _image_jobs(src, dst):
    src, dst = Path(src), Path(dst)
    if src.is_dir():
        dst.mkdir(parents=True, exist_ok=True)
        return [(p, dst / p.name) for p in data.list_images(src)]
    if not src.is_file():
        raise data.DataError(f"no such image or directory: {src}")
    return [(src, dst)]


def cmd_enhance(args):
    l_model, _ = model.load_model(args.l_ckpt, kind="cwan_l")
    ab_model, _ = model.load_model(args.ab_ckpt, kind="cwan_ab")
    for src, dst in _image_jobs(args.input, args.out):
        out = model.enhance(data.load_image(src), l_model, ab_model, seed=args.seed)
        data.save_image(dst, out)
        print(dst)
    return EXIT_OK


def cmd_eval(args):
    preds = {p.name: p for p in data.list_images(args.pred)}
    gts = {p.name: p for p in data.list_images(args.gt)}
    lows = {p.name: p for p in data.list_images(args.low)} if args.low else {}
    names = sorted(set(preds) & set(gts))
    if not names:
        raise data.DataError("no file names shared by --pred and --gt")
    report = metrics.MetricReport()
    for name in names:
        pred = data.load_image(preds[name])
        gt = data.load_image(gts[name])
        row = {"psnr": metrics.psnr(pred, gt), "ssim": metrics.ssim(pred, gt), "colorfulness": metrics.colorfulness(pred)}
        if name in lows:
            row["loe"] = metrics.loe(data.load_image(lows[name]), pred)
        report.add(name, **row)
    out = Path(args.out)
    report.write_csv(out)
    table = report.table()
    out.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def _overlay(img, coords):
    out = np.array(img, dtype=np.float32)
    h, w = out.shape[:2]
    for y, x in coords:
        for dy, dx in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)):
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w:
                out[yy, xx] = (1.0, 0.0, 0.0) if (dy, dx) == (0, 0) else (1.0, 1.0, 0.0)
    return out


def cmd_attn_viz(args):
    ab_model, _ = model.load_model(args.ab_ckpt, kind="cwan_ab")
    img = data.load_image(args.image)
    m_hat = model.predict_attention(img, ab_model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    for i in range(2):
        ch = m_hat[..., i]
        span = ch.max() - ch.min()
        data.save_image(out / f"{stem}_mhat{i}.png", (ch - ch.min()) / span if span > 0 else np.zeros_like(ch))
    base = img
    if args.l_ckpt is not None:
        l_model, _ = model.load_model(args.l_ckpt, kind="cwan_l")
        base = model.enhance(img, l_model, ab_model)
    coords = attention.top_responses(m_hat, args.top)
    data.save_image(out / f"{stem}_top{args.top}.png", _overlay(base, coords))
    if args.gt is not None:
        gt = data.load_image(args.gt)
        m = attention.build_bundle(gt).map
        for i in range(2):
            data.save_image(out / f"{stem}_m{i}.png", m[..., i])
    print(out)
    return EXIT_OK


def cmd_gradcheck(args):
    results = gradcheck.run_all(args.seed, args.h, args.coords, args.channels)
    ok = True
    for name, res in results.items():
        passed = res.max_rel_error < args.tol and res.checked >= args.coords
        ok &= passed
        print(f"{name:16s} max_rel_err={res.max_rel_error:.3e} checked={res.checked} skipped={res.skipped} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_ablate_alpha(args):
    config = _train_config(args)
    alphas = [float(a) for a in args.alphas.split(",")]
    l_model, _ = model.load_model(args.l_ckpt, kind="cwan_l")
    pretrained = _load_pretrained(args, config.seed)
    patches = _patches(args, config, with_attention=True)
    ds = data.read_manifest(args.manifest)
    eval_pairs = data.load_pairs(ds, args.eval_split) or data.load_pairs(ds, "train")
    rows = trainer.alpha_sweep(patches, config, pretrained, l_model, eval_pairs, alphas, args.mode, args.finetune_epochs)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("alpha", "psnr"))
        for r in rows:
            w.writerow((r["alpha"], metrics.format_value(r["psnr"])))
    for r in rows:
        print(f"{r['alpha']}\t{metrics.format_value(r['psnr'])}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = _Parser(prog="cwan", description="Color-wise attention network for low-light enhancement.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="darken images into a paired dataset with a manifest")
    s.add_argument("--in", dest="input", type=Path, help="directory of ground-truth .png/.ppm images")
    s.add_argument("--toy", type=int, default=0, help="generate N toy scenes instead of reading --in")
    s.add_argument("--size", type=int, default=64, help="toy scene side length (default: 64)")
    s.add_argument("--out", type=Path, required=True, help="output directory")
    s.add_argument("--decrease", type=float, default=0.85, help="fractional intensity decrease (default: 0.85)")
    s.add_argument("--sigma", type=float, default=0.0, help="Gaussian noise std on the 0-255 scale (default: 0)")
    s.add_argument("--domain", choices=("linear", "gamma"), default="linear", help="where the darkening is applied (default: linear)")
    s.add_argument("--val-frac", type=float, default=0.0, help="fraction of images in the val split (default: 0)")
    s.add_argument("--test-frac", type=float, default=0.0, help="fraction of images in the test split (default: 0)")
    s.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-l", help="train the lightness network (L1)")
    s.add_argument("--manifest", type=Path, required=True, help="dataset manifest written by synth")
    s.add_argument("--out", type=Path, required=True, help="checkpoint path")
    _train_flags(s, batch_size=16, patch_size=64, per_image=50)
    g = s.add_argument_group("CWAN_L architecture")
    g.add_argument("--memory-blocks", type=int, default=3, help="number of blocks (default: 3)")
    g.add_argument("--channels", type=int, default=64, help="feature maps per layer (default: 64)")
    g.add_argument("--block-type", choices=model.BLOCK_TYPES, default="memory", help="block type (default: memory)")
    s.set_defaults(func=cmd_train_l)

    s = sub.add_parser("pretrain-attn", help="pretrain the attention generator (L1 to the frequency maps)")
    s.add_argument("--manifest", type=Path, required=True, help="dataset manifest written by synth")
    s.add_argument("--out", type=Path, required=True, help="generator checkpoint path")
    _train_flags(s, batch_size=32, patch_size=32, per_image=100)
    _attention_flags(s)
    _ab_arch_flags(s)
    s.set_defaults(func=cmd_pretrain_attn)

    s = sub.add_parser("train-ab", help="train the color network end to end (Huber + alpha * point MSE)")
    s.add_argument("--manifest", type=Path, required=True, help="dataset manifest written by synth")
    s.add_argument("--pretrained", type=Path, help="generator checkpoint from pretrain-attn")
    s.add_argument("--out", type=Path, required=True, help="checkpoint path")
    _train_flags(s, batch_size=32, patch_size=32, per_image=100)
    _attention_flags(s)
    _ab_arch_flags(s)
    _loss_flags(s)
    s.set_defaults(func=cmd_train_ab)

    s = sub.add_parser("enhance", help="enhance an image or a directory of images")
    s.add_argument("--l-ckpt", type=Path, required=True, help="CWAN_L checkpoint")
    s.add_argument("--ab-ckpt", type=Path, required=True, help="CWAN_AB checkpoint")
    s.add_argument("--in", dest="input", type=Path, required=True, help="image file or directory")
    s.add_argument("--out", type=Path, required=True, help="output image file or directory")
    s.add_argument("--seed", type=int, default=0, help="point sampling seed for the gt_points variant (default: 0)")
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("eval", help="PSNR / SSIM / LOE / colorfulness report")
    s.add_argument("--pred", type=Path, required=True, help="directory of enhanced images")
    s.add_argument("--gt", type=Path, required=True, help="directory of ground-truth images")
    s.add_argument("--low", type=Path, help="directory of low-light inputs (enables LOE)")
    s.add_argument("--out", type=Path, default=Path("report.csv"), help="CSV path; a .txt table is written next to it (default: report.csv)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("attn-viz", help="render predicted attention maps and their top responses")
    s.add_argument("--ab-ckpt", type=Path, required=True, help="CWAN_AB checkpoint")
    s.add_argument("--image", type=Path, required=True, help="low-light input image")
    s.add_argument("--out", type=Path, required=True, help="output directory")
    s.add_argument("--l-ckpt", type=Path, help="overlay on the enhanced image instead of the input")
    s.add_argument("--gt", type=Path, help="also render the frequency-derived map of this ground truth")
    s.add_argument("--top", type=int, default=30, help="number of responses to mark (default: 30)")
    s.set_defaults(func=cmd_attn_viz)

    s = sub.add_parser("gradcheck", help="finite-difference check of every layer and both networks")
    s.add_argument("--seed", type=int, default=1, help="random seed (default: 1)")
    s.add_argument("--h", type=float, default=1e-3, help="finite-difference step (default: 1e-3)")
    s.add_argument("--coords", type=int, default=50, help="coordinates per check (default: 50)")
    s.add_argument("--channels", type=int, default=64, help="feature maps in the full networks (default: 64)")
    s.add_argument("--tol", type=float, default=gradcheck.TOLERANCE, help="max relative error (default: 1e-3)")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ablate-alpha", help="train CWAN_AB once per alpha and report PSNR")
    s.add_argument("--manifest", type=Path, required=True, help="dataset manifest written by synth")
    s.add_argument("--l-ckpt", type=Path, required=True, help="trained lightness checkpoint used for evaluation")
    s.add_argument("--pretrained", type=Path, help="generator checkpoint from pretrain-attn")
    s.add_argument("--out", type=Path, required=True, help="CSV with one row per alpha")
    s.add_argument("--alphas", default=",".join(str(a) for a in trainer.ALPHA_SWEEP), help="comma-separated alphas (default: 1.4,...,0.0)")
    s.add_argument("--mode", choices=("cold", "warm"), default="cold", help="cold: train each alpha from the pretrained generator; warm: fine-tune an alpha=1 model (default: cold)")
    s.add_argument("--finetune-epochs", type=int, default=5, help="epochs per alpha in warm mode (default: 5)")
    s.add_argument("--eval-split", default="test", help="split used for PSNR, falls back to train (default: test)")
    _train_flags(s, batch_size=32, patch_size=32, per_image=100)
    _attention_flags(s)
    _ab_arch_flags(s)
    _loss_flags(s)
    s.set_defaults(func=cmd_ablate_alpha)
    return p


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail(args, exc, EXIT_USAGE)
    except (data.DataError, CheckpointError, trainer.ConfigError, ContractError, OSError) as exc:
        return _fail(args, exc, EXIT_DATA)
    except (TrainingDivergence, FloatingPointError, metrics.UndefinedMetricError) as exc:
        return _fail(args, exc, EXIT_NUMERIC)
    except ValueError as exc:
        return _fail(args, exc, EXIT_USAGE)


def _fail(args, exc, code):
    print(f"cwan {args.command}: {exc}", file=sys.stderr)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
