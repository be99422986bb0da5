"""Time the compiled and pure-Python solver kernels on full-sized coding batches.

    python3 benchmarks/bench_kernels.py [--batch 256] [--repeat 3]

Each problem codes a 21-column data matrix against 60 atoms with a Gaussian
kernel, which is what one patch costs inside the pipeline.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from klrsc import kernels
from klrsc.config import KernelSpec
from klrsc.solver import gram_blocks


def make_batch(rng: np.random.Generator, b: int, d: int = 196, k_d: int = 60, k_n: int = 20):
    base = rng.normal(size=(b, 1, d))
    yd = base + 0.8 * rng.normal(size=(b, k_d, d))
    ya = base + 0.8 * rng.normal(size=(b, k_n + 1, d))
    yd /= np.linalg.norm(yd, axis=2, keepdims=True)
    ya /= np.linalg.norm(ya, axis=2, keepdims=True)
    return gram_blocks(yd, ya, KernelSpec(1.0))


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    kdd, kda = make_batch(np.random.default_rng(0), args.batch)
    found = kernels.backends()
    print(f"batch={args.batch} problems, K_D=60, 21 columns; backends: {', '.join(found)}")
    print(f"{'kernel':<8}{'backend':<10}{'total s':>10}{'ms/problem':>12}{'speedup':>9}")
    results = {}
    for name, mod in found.items():
        z0 = mod.ista_batch(kdd, kda, 0.07, 200)
        t_ista = best_of(lambda: mod.ista_batch(kdd, kda, 0.07, 200), args.repeat)
        t_ialm = best_of(lambda: mod.ialm_batch(kdd, kda, z0, 0.07, 0.07, 1.5, 1e-5, 100, 1e3), args.repeat)
        results[name] = {"ista": t_ista, "ialm": t_ialm}
    ref = results["python"]
    for kernel in ("ista", "ialm"):
        for name, res in results.items():
            t = res[kernel]
            print(f"{kernel:<8}{name:<10}{t:>10.3f}{1e3 * t / args.batch:>12.3f}{ref[kernel] / t:>8.1f}x")
    if "cython" in found:
        z0 = found["python"].ista_batch(kdd, kda, 0.07, 200)
        a = found["python"].ialm_batch(kdd, kda, z0, 0.07, 0.07, 1.5, 1e-5, 100, 1e3)[0]
        b = found["cython"].ialm_batch(kdd, kda, z0, 0.07, 0.07, 1.5, 1e-5, 100, 1e3)[0]
        print(f"max |python - cython| code difference: {np.abs(a - b).max():.2e}")


if __name__ == "__main__":
    main()
