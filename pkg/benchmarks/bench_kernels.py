"""Compare the numba and numpy convolution backends on P4CNN-sized layers.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 32] [--dtype f32]

Each row times forward, input-gradient and weight-gradient kernels for one
layer shape and reports throughput in GMAC/s.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from sepgconv import kernels

# (label, C_in, C_out, groups, H_padded, k)
CASES = [
    ("p4cnn layer2 (full)", 40, 40, 1, 26, 3),
    ("p4cnn layer4 (full)", 40, 40, 1, 10, 3),
    ("g-sep stage 2 w=10", 400, 40, 40, 26, 3),
    ("gc-sep stage 2 w=30", 120, 120, 120, 26, 3),
    ("z2cnn layer2", 20, 20, 1, 26, 3),
]


def _time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(batch: int, repeat: int, dtype) -> list[dict]:
    rng = np.random.default_rng(0)
    rows = []
    for label, C, O, groups, Hp, k in CASES:
        xp = rng.standard_normal((batch, C, Hp, Hp)).astype(dtype)
        w = rng.standard_normal((O, C // groups, k, k)).astype(dtype)
        Ho = Hp - k + 1
        gy = rng.standard_normal((batch, O, Ho, Ho)).astype(dtype)
        macs = batch * O * (C // groups) * k * k * Ho * Ho
        results = {}
        for backend in ("numba", "numpy"):
            if backend == "numba" and not kernels.HAVE_NUMBA:
                continue
            with kernels.use_backend(backend):
                t_f = _time(lambda: kernels.conv_forward(xp, w, groups), repeat)
                t_i = _time(lambda: kernels.conv_backward_input(gy, w, groups, xp.shape), repeat)
                t_w = _time(lambda: kernels.conv_backward_weight(gy, xp, groups, k), repeat)
                results[backend] = (t_f, t_i, t_w)
                rows.append({
                    "case": label, "backend": backend,
                    "fwd_ms": 1e3 * t_f, "bwd_in_ms": 1e3 * t_i, "bwd_w_ms": 1e3 * t_w,
                    "gmacs": 3 * macs / (t_f + t_i + t_w) / 1e9,
                })
        if len(results) == 2:
            with kernels.use_backend("numba"):
                a = kernels.conv_forward(xp, w, groups)
            with kernels.use_backend("numpy"):
                b = kernels.conv_forward(xp, w, groups)
            rows[-1]["max_diff"] = float(np.abs(a - b).max())
    return rows


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    args = parser.parse_args(argv)
    kernels.configure_threads()
    dtype = np.float32 if args.dtype == "f32" else np.float64
    print(f"{'case':<24} {'backend':<7} {'fwd ms':>8} {'bwd-in ms':>9} {'bwd-w ms':>9} {'GMAC/s':>7}")
    for r in run(args.batch, args.repeat, dtype):
        line = (f"{r['case']:<24} {r['backend']:<7} {r['fwd_ms']:8.1f} {r['bwd_in_ms']:9.1f} "
                f"{r['bwd_w_ms']:9.1f} {r['gmacs']:7.2f}")
        if "max_diff" in r:
            line += f"   |numba-numpy| = {r['max_diff']:.1e}"
        print(line)


if __name__ == "__main__":
    main()
