"""Benchmark the compiled affine-scan kernel against the NumPy fallback.

Runs the latent-state recurrence used by the simulator at several sizes
and prints per-backend wall time plus the speedup. Also verifies the
two backends produce bit-identical trajectories before timing them.

Usage: python3 benchmarks/scan_benchmark.py [--steps N] [--dim D] [--thin K]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from sdesem import kernels


def make_problem(steps: int, dim: int, rng: np.random.Generator):
    # a stable contraction plus noise, the same shape the simulator emits
    a = rng.standard_normal((dim, dim)) / np.sqrt(dim)
    phi = 0.95 * a / max(1.0, np.abs(np.linalg.eigvals(a)).max())
    w = 0.1 * rng.standard_normal((steps, dim))
    x0 = rng.standard_normal(dim)
    return np.ascontiguousarray(phi), np.ascontiguousarray(w), x0


def run_case(steps: int, dim: int, thin: int, repeats: int = 5) -> None:
    rng = np.random.default_rng(12345)
    phi, w, x0 = make_problem(steps, dim, rng)
    backends = kernels.available_backends()

    outputs = {}
    timings = {}
    for name in backends:
        fn = kernels.get_backend(name).affine_scan
        n_keep = steps // thin + 1
        out = np.empty((n_keep, dim))
        fn(phi, w, x0, thin, kernels.BLOWUP_LIMIT, out)  # warm up
        outputs[name] = out.copy()
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(phi, w, x0, thin, kernels.BLOWUP_LIMIT, out)
            best = min(best, time.perf_counter() - t0)
        timings[name] = best

    if len(backends) == 2:
        gap = np.abs(outputs[backends[0]] - outputs[backends[1]]).max()
        parity = "bit-identical" if gap == 0.0 else f"max |diff| = {gap:.3e}"
    else:
        parity = "single backend built"

    print(f"steps={steps} dim={dim} thin={thin}  ({parity})")
    for name in backends:
        per_step = timings[name] / steps * 1e9
        print(f"  {name:>8}: {timings[name] * 1e3:8.2f} ms  ({per_step:7.1f} ns/step)")
    if "compiled" in timings and "python" in timings:
        print(f"  speedup : {timings['python'] / timings['compiled']:.1f}x")
    print()


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--dim", type=int, default=None)
    parser.add_argument("--thin", type=int, default=1)
    args = parser.parse_args()

    print(f"active backend: {kernels.BACKEND}")
    print(f"available: {', '.join(kernels.available_backends())}\n")
    if args.steps is not None or args.dim is not None:
        run_case(args.steps or 100_000, args.dim or 8, args.thin)
        return
    for steps, dim, thin in (
        (10_000, 2, 1),
        (100_000, 2, 1),
        (100_000, 8, 1),
        (1_600_000, 8, 16),
    ):
        run_case(steps, dim, thin)


if __name__ == "__main__":
    main()
