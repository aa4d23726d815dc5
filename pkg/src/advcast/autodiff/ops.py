"""Elementwise, reduction and structural ops."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..exceptions import ShapeMismatch
from .tensor import Tensor, as_tensor, make_node


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from exc


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return scale(a, b)
    if not isinstance(a, Tensor) and np.isscalar(a):
        return scale(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_node(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return scale(a, 1.0 / b)
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return make_node(out, (a, b), bw, "div")


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = x.data.dtype.type(c)

    def bw(g):
        return (g * c,)

    return make_node(x.data * c, (x,), bw, "scale")


def neg(x) -> Tensor:
    return scale(x, -1.0)


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    p = float(p)

    def bw(g):
        if p == 2.0:
            return (g * 2.0 * xd,)
        return (g * p * np.power(xd, p - 1.0),)

    out = xd * xd if p == 2.0 else np.power(xd, p)
    return make_node(out, (x,), bw, "power")


def square(x) -> Tensor:
    return power(x, 2.0)


def absolute(x) -> Tensor:
    """|x| with subgradient 0 at exactly 0."""
    x = as_tensor(x)
    sign = np.sign(x.data)

    def bw(g):
        return (g * sign,)

    return make_node(np.abs(x.data), (x,), bw, "abs")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def bw(g):
        return (g * 0.5 / out,)

    return make_node(out, (x,), bw, "sqrt")


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.asarray(out), (x,), bw, "sum")


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    in_shape = x.shape

    def bw(g):
        return (g.reshape(in_shape),)

    return make_node(x.data.reshape(shape), (x,), bw, "reshape")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeMismatch("concat needs at least one tensor")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != ts[0].shape[:ax] + ts[0].shape[ax + 1:]:
            raise ShapeMismatch(f"concat shapes differ off axis {axis}: {[s.shape for s in ts]}")
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_node(np.concatenate([t.data for t in ts], axis=ax), ts, bw, "concat")


def split(x, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    x = as_tensor(x)
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax]:
        raise ShapeMismatch(f"split sizes {list(sizes)} do not sum to {x.shape[ax]}")
    out, start = [], 0
    for n in sizes:
        key = (slice(None),) * ax + (slice(start, start + n),)
        out.append(getitem(x, key))
        start += n
    return out


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    nd = ts[0].ndim + 1
    ax = axis % nd
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in ts]
    return concat(expanded, axis=ax)


def _is_basic_index(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, np.integer)) or k is Ellipsis or k is None for k in items)


def getitem(x, key) -> Tensor:
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype
    basic = _is_basic_index(key)

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        return (full,)

    return make_node(x.data[key], (x,), bw, "getitem")


_DENSE_SCATTER_LIMIT = 1 << 16


def take(x, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis; repeated indices accumulate on the way back."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim
    shape, dtype = x.shape, x.dtype
    is_perm = indices.size == shape[ax] and np.array_equal(np.sort(indices), np.arange(shape[ax]))

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if is_perm:
            full_m = np.moveaxis(full, ax, 0)
            full_m[indices] = np.moveaxis(g, ax, 0)
        elif indices.size * shape[ax] <= _DENSE_SCATTER_LIMIT:
            # one-hot matmul beats add.at by an order of magnitude on short axes
            onehot = np.zeros((indices.size, shape[ax]), dtype=dtype)
            onehot[np.arange(indices.size), indices] = 1
            full = np.moveaxis(np.moveaxis(g, ax, -1) @ onehot, -1, ax)
        else:
            np.add.at(np.moveaxis(full, ax, 0), indices, np.moveaxis(g, ax, 0))
        return (full,)

    return make_node(np.take(x.data, indices, axis=ax), (x,), bw, "take")


def leaky_relu(x, slope: float = 0.1) -> Tensor:
    """max-style leaky ReLU; the derivative at exactly 0 is taken as ``slope``."""
    x = as_tensor(x)
    pos = x.data > 0
    s = x.data.dtype.type(slope)

    def bw(g):
        return (np.where(pos, g, g * s),)

    return make_node(np.where(pos, x.data, x.data * s), (x,), bw, "leaky_relu")
