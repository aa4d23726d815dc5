"""Central finite differences against the autodiff engine."""

import numpy as np

from advcast.autodiff import Tensor, backward


def numeric_grad(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def check_op(build, inputs: list[np.ndarray], h: float = 1e-4, seed: int = 0) -> float:
    """Max relative error over inputs of d<r, build(*xs)>/dx, r a fixed random cotangent."""
    leaves = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    out = build(*leaves)
    r = np.random.default_rng(seed).standard_normal(out.shape)
    backward((out * Tensor(r)).sum())
    worst = 0.0
    for i, x in enumerate(inputs):
        def f(xi, i=i):
            args = [Tensor(a) for a in inputs]
            args[i] = Tensor(xi)
            return float((build(*args).data * r).sum())

        num = numeric_grad(f, x.copy(), h)
        worst = max(worst, rel_error(leaves[i].grad, num))
    return worst
