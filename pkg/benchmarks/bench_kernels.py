"""Time the numba and numpy backends of the hot kernels.

    python benchmarks/bench_kernels.py [--size 64] [--batch 16] [--repeat 5]

Each kernel runs once per backend to warm the JIT, then ``--repeat`` times;
the best wall time is reported along with the max abs difference between
the two backends' outputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from advcast import _jit
from advcast.fields import Boundary
from advcast.sampling import bilinear_sample, pixel_grid
from advcast.simulator import SimConfig, kernel_solution, semi_lagrangian_step
from advcast.warp import WarpParams, warp_backward, warp_forward


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def kernels(n, batch, rng):
    img = rng.standard_normal((batch, n, n))
    mot = rng.uniform(-3, 3, (batch, 2, n, n))
    g = rng.standard_normal((batch, n, n))
    p = WarpParams()
    xx, yy = pixel_grid(n, n)
    px = np.broadcast_to(xx - 1.3, img.shape)
    py = np.broadcast_to(yy + 0.7, img.shape)
    field = rng.standard_normal((n, n))
    w = np.stack([np.full((n, n), 1.3), np.full((n, n), -0.6)])
    sim = SimConfig(height=n, width=n, boundary=Boundary.PERIODIC)
    _, cache = warp_forward(img, mot, p)

    return {
        "warp_forward": lambda: warp_forward(img, mot, p)[0],
        "warp_backward": lambda: warp_backward(cache, g)[1],
        "bilinear_sample": lambda: bilinear_sample(img, px, py, Boundary.REPLICATE),
        "semi_lagrangian_step": lambda: semi_lagrangian_step(field, w, sim),
        "kernel_solution": lambda: kernel_solution(field, (1.3, -0.6), 0.45, 2.0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _jit.HAVE_NUMBA:
        raise SystemExit("numba is not available (or ADVCAST_DISABLE_NUMBA is set); nothing to compare")

    results = {}
    for name in ("numba", "numpy"):
        _jit.set_backend(name)
        rng = np.random.default_rng(0)
        for kernel, fn in kernels(args.size, args.batch, rng).items():
            results.setdefault(kernel, {})[name] = best_of(fn, args.repeat)
    _jit.set_backend("numba")

    print(f"{'kernel':<22}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'max |diff|':>12}")
    for kernel, r in results.items():
        (tn, on), (tp, op) = r["numba"], r["numpy"]
        diff = float(np.max(np.abs(np.asarray(on) - np.asarray(op))))
        print(f"{kernel:<22}{tn * 1e3:>10.2f}{tp * 1e3:>10.2f}{tp / tn:>8.1f}x{diff:>12.2e}")


if __name__ == "__main__":
    main()
