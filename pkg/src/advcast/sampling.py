"""Bilinear point sampling on a pixel grid.

Used by the semi-Lagrangian integrator as its interpolant and by the tests as
the independent reference the Gaussian warp must approach for small kernels.
"""

from __future__ import annotations

import numpy as np

from . import _jit
from ._jit import njit
from .fields import Boundary, as_boundary


@njit(cache=True)
def _wrap(i, n, periodic):
    if periodic:
        i = i % n
        if i < 0:
            i += n
        return i
    if i < 0:
        return 0
    if i > n - 1:
        return n - 1
    return i


@njit(cache=True)
def _bilinear_numba(img, px, py, periodic):
    nb, h, w = img.shape
    out = np.empty(px.shape, dtype=img.dtype)
    for n in range(nb):
        for i in range(h):
            for j in range(w):
                x = px[n, i, j]
                y = py[n, i, j]
                x0 = int(np.floor(x))
                y0 = int(np.floor(y))
                fx = x - x0
                fy = y - y0
                xa = _wrap(x0, w, periodic)
                xb = _wrap(x0 + 1, w, periodic)
                ya = _wrap(y0, h, periodic)
                yb = _wrap(y0 + 1, h, periodic)
                top = (1.0 - fx) * img[n, ya, xa] + fx * img[n, ya, xb]
                bot = (1.0 - fx) * img[n, yb, xa] + fx * img[n, yb, xb]
                out[n, i, j] = (1.0 - fy) * top + fy * bot
    return out


def _index(i: np.ndarray, n: int, periodic: bool) -> np.ndarray:
    return np.mod(i, n) if periodic else np.clip(i, 0, n - 1)


def _bilinear_numpy(img, px, py, periodic):
    nb, h, w = img.shape
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = (px - x0).astype(img.dtype)
    fy = (py - y0).astype(img.dtype)
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    xa, xb = _index(x0, w, periodic), _index(x0 + 1, w, periodic)
    ya, yb = _index(y0, h, periodic), _index(y0 + 1, h, periodic)
    n = np.arange(nb)[:, None, None]
    top = (1.0 - fx) * img[n, ya, xa] + fx * img[n, ya, xb]
    bot = (1.0 - fx) * img[n, yb, xa] + fx * img[n, yb, xb]
    return ((1.0 - fy) * top + fy * bot).astype(img.dtype, copy=False)


def bilinear_sample(img: np.ndarray, px: np.ndarray, py: np.ndarray, boundary=Boundary.PERIODIC, use_numba=None) -> np.ndarray:
    """Sample ``img`` (…, H, W) at fractional column ``px`` and row ``py`` positions."""
    img = np.asarray(img)
    squeeze = img.ndim == 2
    img3 = img.reshape((-1,) + img.shape[-2:])
    px3 = np.asarray(px, dtype=np.float64).reshape(img3.shape)
    py3 = np.asarray(py, dtype=np.float64).reshape(img3.shape)
    periodic = as_boundary(boundary) is Boundary.PERIODIC
    numba_path = _jit.USE_NUMBA if use_numba is None else use_numba
    fn = _bilinear_numba if numba_path else _bilinear_numpy
    out = fn(np.ascontiguousarray(img3), px3, py3, periodic)
    return out[0] if squeeze else out.reshape(img.shape)


def pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """(column, row) coordinate arrays of shape (H, W)."""
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return xx, yy
