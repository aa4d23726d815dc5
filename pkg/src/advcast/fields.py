"""Grid types and discrete differential operators.

Scalar fields are arrays of shape ``(..., H, W)`` and vector fields are
``(..., 2, H, W)`` with component 0 the x-displacement ``u`` (along columns)
and component 1 the y-displacement ``v`` (along rows).  Spacing is one pixel.

The stencils are written against a tiny shift primitive so the same code runs
on plain ndarrays and on :class:`advcast.autodiff.Tensor` values; the loss
module relies on that to differentiate the regularizers.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .autodiff import Tensor
from .autodiff import ops as ad
from .exceptions import InvalidField, ShapeMismatch

MIN_SIDE = 4


class Boundary(str, Enum):
    PERIODIC = "periodic"
    REPLICATE = "replicate"


def as_boundary(b) -> Boundary:
    return b if isinstance(b, Boundary) else Boundary(str(b).lower())


def check_scalar_field(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f)
    if f.ndim < 2:
        raise InvalidField(f"scalar field needs at least 2 dims, got shape {f.shape}")
    h, w = f.shape[-2:]
    if h < MIN_SIDE or w < MIN_SIDE:
        raise InvalidField(f"field must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}")
    if not np.all(np.isfinite(f)):
        raise InvalidField("field contains NaN or Inf")
    return f


def check_vector_field(w: np.ndarray, like: np.ndarray | None = None) -> np.ndarray:
    w = np.asarray(w)
    if w.ndim < 3 or w.shape[-3] != 2:
        raise InvalidField(f"vector field must have shape (..., 2, H, W), got {w.shape}")
    check_scalar_field(w)
    if like is not None and w.shape[-2:] != np.shape(like)[-2:]:
        raise ShapeMismatch(f"vector field {w.shape[-2:]} does not match scalar field {np.shape(like)[-2:]}")
    return w


def neighbor_index(n: int, offset: int, boundary) -> np.ndarray:
    idx = np.arange(n) + offset
    if as_boundary(boundary) is Boundary.PERIODIC:
        return idx % n
    return np.clip(idx, 0, n - 1)


def shift(f, offset: int, axis: int, boundary):
    """Value of ``f`` at index ``i + offset`` along ``axis`` for every ``i``."""
    idx = neighbor_index(f.shape[axis], offset, boundary)
    if isinstance(f, Tensor):
        return ad.take(f, idx, axis)
    return np.take(f, idx, axis=axis)


def partial_x(f, boundary=Boundary.PERIODIC, step: int = 1):
    return (shift(f, step, -1, boundary) - shift(f, -step, -1, boundary)) * (0.5 / step)


def partial_y(f, boundary=Boundary.PERIODIC, step: int = 1):
    return (shift(f, step, -2, boundary) - shift(f, -step, -2, boundary)) * (0.5 / step)


def grad(f, boundary=Boundary.PERIODIC):
    """Central-difference gradient, returned as a vector field (..., 2, H, W)."""
    gx = partial_x(f, boundary)
    gy = partial_y(f, boundary)
    if isinstance(f, Tensor):
        return ad.stack([gx, gy], axis=-3)
    return np.stack([gx, gy], axis=-3)


def divergence(w, boundary=Boundary.PERIODIC):
    return partial_x(w[..., 0, :, :], boundary) + partial_y(w[..., 1, :, :], boundary)


def laplacian(f, boundary=Boundary.PERIODIC):
    """Five-point Laplacian: -4 at the center, +1 on each 4-neighbour."""
    return (
        shift(f, 1, -1, boundary)
        + shift(f, -1, -1, boundary)
        + shift(f, 1, -2, boundary)
        + shift(f, -1, -2, boundary)
        - f * 4.0
    )


def laplacian_wide(f, boundary=Boundary.PERIODIC):
    """Laplacian on the 2-pixel stencil; equals ``divergence(grad(f))`` on periodic grids."""
    return (
        shift(f, 2, -1, boundary)
        + shift(f, -2, -1, boundary)
        + shift(f, 2, -2, boundary)
        + shift(f, -2, -2, boundary)
        - f * 4.0
    ) * 0.25
