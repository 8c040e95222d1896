"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The training criteria (5, 6, 7, 10) share one micro-benchmark run: five
synthetic 32x32 pairs, default architectures and hyperparameters.
"""

import math
import time

import numpy as np
import pytest

from cwan import cli, data, gradcheck, metrics, trainer
from cwan.attention import color_frequency, frequency_mask, map_support, sample_attention_points, thresholds
from cwan.colorspace import lab_to_rgb, rgb_to_lab
from cwan.model import CwanAB, CwanL

# step budget of the micro-benchmark (optimizer updates per phase)
L_STEPS = 400
PRETRAIN_STEPS = 200
AB_STEPS = 600
FINETUNE_EPOCHS = 5


# ---------------------------------------------------------------------------
# oracles


def brute_frequency(img):
    """O(N^2) all-pairs comparison of 8-bit colors."""
    q = np.rint(np.clip(img, 0, 1) * 255).astype(np.int64).reshape(-1, 3)
    same = np.all(q[:, None, :] == q[None, :, :], axis=-1)
    return same.sum(axis=1).reshape(img.shape[:2])


def brute_mask(freq, lo, hi):
    out = np.zeros(freq.shape, dtype=np.uint8)
    for idx, f in np.ndenumerate(freq):
        out[idx] = 1 if lo < f < hi else 0
    return out


def brute_loe(low, enh):
    la, lb = low.max(axis=-1).ravel(), enh.max(axis=-1).ravel()
    count = 0
    for i in range(la.size):
        for j in range(la.size):
            count += (la[i] >= la[j]) != (lb[i] >= lb[j])
    return count / la.size


# ---------------------------------------------------------------------------
# shared micro-benchmark


@pytest.fixture(scope="module")
def bench():
    pairs = data.micro_dataset(n=5, size=32, seed=0)
    patches = data.extract_patches(pairs, 32, 1, seed=0, with_attention=True)
    base = trainer.TrainConfig()
    t0 = time.perf_counter()
    l_run = trainer.train_cwan_l(patches, base.replace(batch_size=16, epochs=L_STEPS), CwanL(seed=1))
    pre = trainer.pretrain_attention_generator(patches, base.replace(batch_size=32, epochs=PRETRAIN_STEPS), CwanAB(seed=2))
    ab_run = trainer.train_cwan_ab(
        patches, base.replace(batch_size=32, epochs=AB_STEPS, diagnostics=True), trainer.copy_ab(pre.model)
    )
    seconds = time.perf_counter() - t0
    return {
        "pairs": pairs,
        "patches": patches,
        "l": l_run.model,
        "ab": ab_run.model,
        "optimizer": ab_run.optimizer,
        "history": ab_run.history,
        "steps": l_run.steps + pre.steps + ab_run.steps,
        "seconds": seconds,
        "psnr": trainer.evaluate_pairs(l_run.model, ab_run.model, pairs),
    }


def _finetune(bench, alpha, seed):
    cfg = trainer.TrainConfig(batch_size=32, epochs=FINETUNE_EPOCHS, seed=seed).replace(alpha=alpha)
    model = trainer.train_cwan_ab(bench["patches"], cfg, trainer.copy_ab(bench["ab"]), bench["optimizer"]).model
    return trainer.evaluate_pairs(bench["l"], model, bench["pairs"])


# ---------------------------------------------------------------------------
# criteria


def test_c01_gradient_correctness(verdict):
    t0 = time.perf_counter()
    results = gradcheck.run_all(seed=1, h=1e-3, n_coords=50, channels=64)
    seconds = time.perf_counter() - t0
    worst = max(r.max_rel_error for r in results.values())
    fewest = min(r.checked for r in results.values())
    ok = worst < 1e-3 and fewest >= 50 and seconds < 60
    verdict(1, "finite-difference gradients", ok, f"{len(results)} checks, max rel err {worst:.2e}, min coords {fewest}, {seconds:.1f}s")


def test_c02_attention_and_loe_oracles(verdict):
    rng = np.random.default_rng(2)
    mismatches = 0
    for _ in range(500):
        h, w = rng.integers(1, 33, size=2)
        palette = rng.integers(0, 256, (int(rng.integers(1, 12)), 3)) / 255.0
        img = palette[rng.integers(0, len(palette), (h, w))]
        freq = color_frequency(img)
        lo, hi = thresholds(freq.size)
        ref = brute_frequency(img)
        mismatches += not np.array_equal(freq, ref)
        mismatches += not np.array_equal(frequency_mask(freq, lo, hi), brute_mask(ref, lo, hi))
    loe_bad = 0
    for _ in range(20):
        low = rng.integers(0, 8, (8, 8, 3)) / 7
        enh = rng.integers(0, 8, (8, 8, 3)) / 7
        loe_bad += metrics.loe(low, enh) != brute_loe(low, enh)
    verdict(2, "attention / LOE oracle equivalence", mismatches == 0 and loe_bad == 0,
            f"{mismatches} frequency/mask mismatches on 500 images, {loe_bad} LOE mismatches on 20 8x8 pairs")


def test_c03_threshold_constants(verdict):
    def mask_for(count):
        img = np.zeros((32, 32, 3))
        img.reshape(-1, 3)[:count] = (200 / 255, 10 / 255, 10 / 255)
        freq = color_frequency(img)
        return frequency_mask(freq, *thresholds(freq.size)).reshape(-1)[:count]

    lo, hi = thresholds(1024)
    expect = {600: 0, 513: 0, 512: 0, 511: 1, 100: 1, 52: 1, 51: 0, 10: 0}
    got = {c: int(mask_for(c).max()) for c in expect}
    full = all(mask_for(c).sum() == (c if expect[c] else 0) for c in expect)
    ok = (lo, hi) == (51.2, 512.0) and got == expect and full
    verdict(3, "tau_l = 0.05N, tau_u = 0.5N (strict)", ok, f"tau=({lo}, {hi}), in-mask by count {got}")


def test_c04_colorspace_round_trip(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        img = rng.random((16, 16, 3)).astype(np.float32)
        worst = max(worst, float(np.abs(lab_to_rgb(*rgb_to_lab(img)) - img).max()))
    verdict(4, "rgb -> lab -> rgb round trip", worst < 1 / 255, f"max error {worst * 255:.4f}/255 over 1000 images")


def test_c05_overfit_micro_benchmark(bench, verdict):
    ok = bench["psnr"] >= 25.0 and bench["steps"] <= 2000 and bench["seconds"] < 600
    verdict(5, "micro-benchmark overfit", ok,
            f"end-to-end PSNR {bench['psnr']:.2f} dB after {bench['steps']} steps in {bench['seconds']:.0f}s")


def test_c06_alpha_trend(bench, verdict):
    with_points = _finetune(bench, 1.0, 0)
    without = _finetune(bench, 0.0, 0)
    verdict(6, "PSNR(alpha=1) >= PSNR(alpha=0)", with_points >= without,
            f"alpha=1 {with_points:.4f} dB, alpha=0 {without:.4f} dB ({FINETUNE_EPOCHS}-epoch fine-tunes of the alpha=1 model)")


def test_c07_point_psnr_leads(bench, verdict):
    hist = bench["history"]
    quartile = hist[: math.ceil(len(hist) / 4)]
    lead = [e.psnr_beta > e.psnr_nbr for e in quartile]
    ok = all(lead)
    verdict(7, "beta-point PSNR > 8-neighborhood PSNR early", ok,
            f"{sum(lead)}/{len(lead)} epochs of the first quartile; epoch 0: {hist[0].psnr_beta:.2f} vs {hist[0].psnr_nbr:.2f} dB")


def _cli_outputs(root, tag):
    m = str(root / "ds" / "manifest.tsv")
    out = root / tag
    out.mkdir()
    tiny = ["--patch-size", "32", "--per-image", "1", "--channels", "8", "--seed", "3"]
    cmds = [
        ["synth", "--toy", "3", "--size", "32", "--out", str(out / "ds"), "--seed", "3", "--sigma", "5"],
        ["train-l", "--manifest", m, "--out", str(out / "l.ckpt"), "--epochs", "3", "--log", str(out / "l.csv"), *tiny],
        ["pretrain-attn", "--manifest", m, "--out", str(out / "g.ckpt"), "--epochs", "3", "--log", str(out / "g.csv"), *tiny],
        ["train-ab", "--manifest", m, "--pretrained", str(out / "g.ckpt"), "--out", str(out / "ab.ckpt"), "--epochs", "3", "--diagnostics", "--log", str(out / "ab.csv"), *tiny],
        ["enhance", "--l-ckpt", str(out / "l.ckpt"), "--ab-ckpt", str(out / "ab.ckpt"), "--in", str(root / "ds" / "low"), "--out", str(out / "enh")],
        ["eval", "--pred", str(out / "enh"), "--gt", str(root / "ds" / "gt"), "--low", str(root / "ds" / "low"), "--out", str(out / "eval.csv")],
        ["attn-viz", "--ab-ckpt", str(out / "ab.ckpt"), "--image", str(root / "ds" / "low" / "toy0000.png"), "--out", str(out / "viz")],
        ["ablate-alpha", "--manifest", m, "--l-ckpt", str(out / "l.ckpt"), "--pretrained", str(out / "g.ckpt"), "--out", str(out / "sweep.csv"), "--epochs", "2", "--alphas", "1.0,0.0", *tiny],
        ["gradcheck", "--seed", "1", "--channels", "8", "--coords", "10"],
    ]
    codes = [cli.run(c) for c in cmds]
    files = {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
    return codes, files


def test_c08_determinism(tmp_path, verdict, capsys):
    assert cli.run(["synth", "--toy", "3", "--size", "32", "--out", str(tmp_path / "ds"), "--seed", "1"]) == 0
    codes_a, files_a = _cli_outputs(tmp_path, "a")
    codes_b, files_b = _cli_outputs(tmp_path, "b")
    capsys.readouterr()
    differ = sorted(k for k in files_a if files_a[k] != files_b.get(k))
    ok = codes_a == codes_b == [0] * len(codes_a) and set(files_a) == set(files_b) and not differ
    verdict(8, "bitwise-identical reruns", ok,
            f"9 subcommands, {len(files_a)} output files compared, differing: {differ or 'none'}")


def test_c09_metric_sanity(verdict):
    rng = np.random.default_rng(9)
    x = rng.random((32, 32, 3)) * 0.8
    gray = np.repeat(rng.random((16, 16, 1)), 3, axis=-1)
    e = rng.standard_normal(x.shape) * 0.02
    gain = metrics.psnr(x + e / 2, x) - metrics.psnr(x + e, x)
    checks = {
        "ssim(x,x)": metrics.ssim(x, x) == 1.0,
        "colorfulness(gray)": abs(metrics.colorfulness(gray)) < 1e-9,
        "loe(x,x)": metrics.loe(x, x) == 0,
        "halving +6.02dB": abs(gain - 6.02) <= 0.01,
    }
    verdict(9, "metric sanity", all(checks.values()), f"{checks}, halving gain {gain:.4f} dB")


def test_c10_point_sampling_contract(bench, verdict):
    rng = np.random.default_rng(10)
    bad = 0
    for i in range(1000):
        m = rng.random((32, 32, 2)) * (rng.random((32, 32, 1)) < rng.uniform(0, 0.05))
        pm, _ = sample_attention_points(m, 20, seed=i)
        bad += int(pm.sum()) != min(20, int(map_support(m).sum()))
    runs = [_finetune(bench, 1.0, seed) for seed in (1, 2, 3)]
    std = float(np.std(runs))
    ok = bad == 0 and std < 0.1
    verdict(10, "point-sampling contract and reseeding stability", ok,
            f"{bad}/1000 count violations; PSNR over 3 reseeded fine-tunes {', '.join(f'{r:.4f}' for r in runs)} (std {std:.4f} dB)")
