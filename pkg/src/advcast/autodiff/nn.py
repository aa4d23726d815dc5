"""Layers needed by the motion estimator: conv, transposed conv, batch norm.

Convolutions go through an im2col buffer laid out as ``(N, C*kh*kw, P)``
with ``P`` output positions, so both directions reduce to batched matmuls.
Output sizes follow the usual floor rule, ``(H + 2p - k) // s + 1``; the
transposed conv takes ``output_padding`` to pick which of the ``s`` input
sizes it inverts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import InsufficientBatch, ShapeMismatch
from .tensor import Tensor, as_tensor, make_node


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv_transpose_output_size(n: int, k: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (n - 1) * stride - 2 * padding + k + output_padding


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, c: int, hp: int, wp: int, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n = cols.shape[0]
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return out


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _batched_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_n a[n] @ b[n].T for a (N, A, P), b (N, B, P)."""
    acc = a[0] @ b[0].T
    for i in range(1, a.shape[0]):
        acc += a[i] @ b[i].T
    return acc


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (N, C, H, W) with weight (F, C, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if cw != c:
        raise ShapeMismatch(f"weight expects {cw} input channels, input has {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatch(f"kernel size must be odd, got {kh}x{kw}")
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"input {h}x{w} too small for kernel {kh}x{kw}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (f,):
            raise ShapeMismatch(f"bias must have shape ({f},), got {bias.shape}")

    xp = _pad(x.data, padding)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(f, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, f, ho, wo)
    hp, wp = xp.shape[2:]

    def bw(g):
        g = g.reshape(n, f, ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g)
            dxp = _col2im(dcols, c, hp, wp, kh, kw, stride, ho, wo)
            gx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        if weight.requires_grad:
            gw = _batched_outer(g, cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, bw, "conv2d")


def conv_transpose2d(x, weight, bias=None, stride: int = 1, padding: int = 0,
                     output_padding: int | tuple[int, int] = 0) -> Tensor:
    """Adjoint of :func:`conv2d` for weight (C_in, C_out, kh, kw).

    With matching ``stride``/``padding`` and ``output_padding`` equal to
    ``(H + 2p - k) % stride`` this is exactly the transpose of the conv2d
    linear map from size ``H`` to ``conv_output_size(H, ...)``.  A pair sets
    the padding per axis (rows, columns).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatch(f"conv_transpose2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cw, cout, kh, kw = weight.shape
    if cw != cin:
        raise ShapeMismatch(f"weight expects {cw} input channels, input has {cin}")
    oph, opw = (output_padding, output_padding) if isinstance(output_padding, int) else output_padding
    if any(op < 0 or (op > 0 and op >= stride) for op in (oph, opw)):
        raise ShapeMismatch("output_padding must be smaller than stride")
    ho = conv_transpose_output_size(h, kh, stride, padding, oph)
    wo = conv_transpose_output_size(w, kw, stride, padding, opw)
    if ho < 1 or wo < 1:
        raise ShapeMismatch("transposed conv output would be empty")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeMismatch(f"bias must have shape ({cout},), got {bias.shape}")

    hp, wp = ho + 2 * padding, wo + 2 * padding
    wmat = weight.data.reshape(cin, -1)
    xm = x.data.reshape(n, cin, h * w)
    cols = np.matmul(wmat.T, xm)
    full = _col2im(cols, cout, hp, wp, kh, kw, stride, h, w)
    out = full[:, :, padding:padding + ho, padding:padding + wo] if padding else full
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        gp = _pad(g, padding)
        gcols = _im2col(gp, kh, kw, stride, h, w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.matmul(wmat, gcols).reshape(x.shape)
        if weight.requires_grad:
            gw = _batched_outer(xm, gcols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, bw, "conv_transpose2d")


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum, eps)


def batch_norm(x, gamma, beta, state: BatchNormState, train: bool = True) -> Tensor:
    """Per-channel normalization of x (N, C, H, W).

    Train mode normalizes with the biased batch variance and folds the
    unbiased variance into the running estimate; eval mode uses the running
    statistics only.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ShapeMismatch(f"batch_norm expects (N, C, H, W), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch("gamma/beta must have one entry per channel")
    xd = x.data
    g4 = gamma.data[None, :, None, None]
    eps = state.eps
    if train:
        count = xd.shape[0] * xd.shape[2] * xd.shape[3]
        if count < 2:
            raise InsufficientBatch("batch norm in train mode needs N*H*W >= 2")
        mu = xd.mean(axis=(0, 2, 3))
        centered = xd - mu[None, :, None, None]
        var = (centered * centered).mean(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std[None, :, None, None]
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mu).astype(state.running_mean.dtype)
        unbiased = var * (count / (count - 1))
        state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(state.running_var.dtype)

        def bw(g):
            gg = gb = None
            gx = None
            if gamma.requires_grad:
                gg = (g * xhat).sum(axis=(0, 2, 3))
            if beta.requires_grad:
                gb = g.sum(axis=(0, 2, 3))
            if x.requires_grad:
                dxhat = g * g4
                s1 = dxhat.mean(axis=(0, 2, 3))[None, :, None, None]
                s2 = (dxhat * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
                gx = (dxhat - s1 - xhat * s2) * inv_std[None, :, None, None]
            return gx, gg, gb
    else:
        inv_std = (1.0 / np.sqrt(state.running_var + eps)).astype(xd.dtype)
        xhat = (xd - state.running_mean.astype(xd.dtype)[None, :, None, None]) * inv_std[None, :, None, None]

        def bw(g):
            gx = g * (g4 * inv_std[None, :, None, None]) if x.requires_grad else None
            gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
            gb = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
            return gx, gg, gb

    out = (xhat * g4 + beta.data[None, :, None, None]).astype(xd.dtype, copy=False)
    return make_node(out, (x, gamma, beta), bw, "batch_norm")
