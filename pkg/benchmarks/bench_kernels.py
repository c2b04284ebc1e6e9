#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy twins.

Runs every hot kernel on desk-scale shapes under both backends and prints
a table of per-call times plus the speedup. Select shapes with --big for
the batch-training geometry.

    python benchmarks/bench_kernels.py [--big] [--repeat N]
"""

import argparse
import time

import numpy as np

from ssmlab import kernels


def timeit(fn, repeat):
    fn()  # warmup (and JIT compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def build_inputs(big):
    rng = np.random.default_rng(0)
    if big:
        B, L, C, N, W = 64, 21, 128, 16, 4
    else:
        B, L, C, N, W = 4, 64, 32, 16, 4
    a = -(rng.random((C, N)) + 0.1)
    delta = rng.random((B, L, C)) * 0.2 + 1e-3
    bt = rng.standard_normal((B, L, N))
    ct = rng.standard_normal((B, L, N))
    x = rng.standard_normal((B, L, C))
    abar = np.exp(delta[..., None] * a)
    gy = rng.standard_normal((B, L, C))
    abar_c = rng.random((C, N)) * 0.9
    bbar_c = rng.standard_normal((C, N))
    cmat = rng.standard_normal((C, N))
    w = rng.standard_normal((C, W))
    bias = rng.standard_normal(C)
    gk = rng.standard_normal((C, L))
    return dict(a=a, delta=delta, bt=bt, ct=ct, x=x, abar=abar, gy=gy,
                abar_c=abar_c, bbar_c=bbar_c, cmat=cmat, w=w, bias=bias, gk=gk, L=L)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--big", action="store_true", help="batch-training shapes")
    ap.add_argument("--repeat", type=int, default=10)
    args = ap.parse_args()

    v = build_inputs(args.big)
    _, h = kernels.selective_scan_fwd(v["a"], v["delta"], v["bt"], v["ct"], v["x"], v["abar"])
    _, hl = kernels.lti_scan_fwd(v["abar_c"], v["bbar_c"], v["cmat"], v["x"])

    cases = {
        "selective_scan_fwd": lambda k: k.selective_scan_fwd(v["a"], v["delta"], v["bt"], v["ct"], v["x"], v["abar"]),
        "selective_scan_bwd": lambda k: k.selective_scan_bwd(v["a"], v["delta"], v["bt"], v["ct"], v["x"], v["abar"], h, v["gy"]),
        "lti_scan_fwd": lambda k: k.lti_scan_fwd(v["abar_c"], v["bbar_c"], v["cmat"], v["x"]),
        "lti_scan_bwd": lambda k: k.lti_scan_bwd(v["abar_c"], v["bbar_c"], v["cmat"], v["x"], hl, v["gy"]),
        "lti_kernel_fwd": lambda k: k.lti_kernel_fwd(v["abar_c"], v["bbar_c"], v["cmat"], v["L"]),
        "lti_kernel_bwd": lambda k: k.lti_kernel_bwd(v["abar_c"], v["bbar_c"], v["cmat"], v["L"], v["gk"]),
        "dwconv_fwd": lambda k: k.dwconv_fwd(v["w"], v["bias"], v["x"]),
        "dwconv_bwd": lambda k: k.dwconv_bwd(v["w"], v["x"], v["gy"]),
    }

    backends = kernels.available_backends()
    print(f"shapes: {'batch-training' if args.big else 'single-sequence'};"
          f" backends: {', '.join(backends)}")
    header = f"{'kernel':22s}" + "".join(f"{b + ' (ms)':>14s}" for b in backends)
    if "numba" in backends and "numpy" in backends:
        header += f"{'speedup':>10s}"
    print(header)
    prev = kernels.backend_name()
    try:
        for name, call in cases.items():
            times = {}
            for b in backends:
                kernels.set_backend(b)
                times[b] = timeit(lambda: call(kernels), args.repeat)
            row = f"{name:22s}" + "".join(f"{times[b] * 1e3:14.3f}" for b in backends)
            if "numba" in times and "numpy" in times:
                row += f"{times['numpy'] / times['numba']:10.2f}x"
            print(row)
    finally:
        kernels.set_backend(prev)


if __name__ == "__main__":
    main()
