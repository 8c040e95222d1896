"""Compare the compiled and numpy kernel backends.

Run ``python3 benchmarks/bench_kernels.py``.  Each row times one kernel on
both backends (best of several repeats) and checks that they agree bit for
bit.
"""

import argparse
import time

import numpy as np

from cwan import _pykernels, kernels
from cwan.nn import conv2d_backward, conv2d_forward


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    xp = rng.standard_normal((5, 34, 34, 64)).astype(np.float32)
    cols = np.empty((5 * 32 * 32, 9 * 64), np.float32)
    dcols = rng.standard_normal(cols.shape).astype(np.float32)
    dxp = np.zeros_like(xp)
    la, lb = rng.random(2500), rng.random(2500)

    def im2col(be):
        def run():
            be.im2col(xp, 3, cols)
            return cols.copy()
        return run

    def col2im(be):
        def run():
            dxp.fill(0)
            be.col2im(dcols, dxp, 3)
            return dxp.copy()
        return run

    def flips(be):
        return lambda: be.order_flips(la, lb)

    return [("im2col 5x32x32x64 k3", im2col), ("col2im 5x32x32x64 k3", col2im), ("order_flips n=2500", flips)]


def conv_step(rng):
    x = rng.standard_normal((5, 32, 32, 64)).astype(np.float32)
    w = (rng.standard_normal((64, 64, 3, 3)) * 0.05).astype(np.float32)
    b = np.zeros(64, np.float32)
    dy = rng.standard_normal(x.shape).astype(np.float32)

    def run():
        y, cache = conv2d_forward(x, w, b)
        conv2d_backward(dy, cache)
        return y

    return run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled extension unavailable; only the numpy backend can be timed")
    backends = {"python": _pykernels}
    if kernels.BACKEND == "cython":
        backends["cython"] = kernels.get_backend("cython")
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s}" + "".join(f"{name:>12s}" for name in backends) + f"{'speedup':>10s}{'equal':>8s}")
    for label, make in cases(rng):
        secs, outs = {}, {}
        for name, be in backends.items():
            fn = make(be)
            outs[name] = fn()
            secs[name] = best_of(fn, args.repeat)
        speed = secs["python"] / secs["cython"] if "cython" in secs else float("nan")
        equal = all(np.array_equal(outs["python"], o) for o in outs.values())
        print(f"{label:28s}" + "".join(f"{secs[n] * 1e3:10.2f}ms" for n in backends) + f"{speed:9.1f}x{str(equal):>8s}")
    # one 64->64 conv layer forward + backward, GEMM included
    step = conv_step(rng)
    active = kernels._impl
    secs = {}
    try:
        for name, be in backends.items():
            kernels._impl = be
            secs[name] = best_of(step, args.repeat)
    finally:
        kernels._impl = active
    speed = secs["python"] / secs["cython"] if "cython" in secs else float("nan")
    print(f"{'conv3x3 fwd+bwd 5x32x32x64':28s}" + "".join(f"{secs[n] * 1e3:10.2f}ms" for n in backends) + f"{speed:9.1f}x")


if __name__ == "__main__":
    main()
