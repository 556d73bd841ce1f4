"""Differentiable neural-network primitives on NCHW tensors."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import DegenerateVarianceError, DimensionError, GeometryError
from .tensor import Tensor, make_op


def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    effective = (kernel - 1) * dilation + 1
    return (size + 2 * padding - effective) // stride + 1


def _require_nchw(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{what} expects a 4-d NCHW tensor, got shape {x.shape}")


def _tap_slices(i: int, j: int, dilation: int, stride: int, out_h: int, out_w: int):
    hs, ws = i * dilation, j * dilation
    return (
        slice(hs, hs + stride * (out_h - 1) + 1, stride),
        slice(ws, ws + stride * (out_w - 1) + 1, stride),
    )


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-d cross-correlation (no kernel flip) with dilation and zero padding.

    Implemented as im2col followed by one batched matrix product.
    """
    _require_nchw(x, "conv2d")
    if w.ndim != 4:
        raise DimensionError(f"conv2d weight must be [Cout, Cin, kh, kw], got {w.shape}")
    n, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise DimensionError(f"conv2d input has {cin} channels but weight expects {wcin}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv2d bias must have shape ({cout},), got {b.shape}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise GeometryError("stride and dilation must be >= 1 and padding >= 0")
    eff_h, eff_w = (kh - 1) * dilation + 1, (kw - 1) * dilation + 1
    if eff_h > h + 2 * padding or eff_w > wd + 2 * padding:
        raise GeometryError(
            f"effective kernel {eff_h}x{eff_w} exceeds padded input {h + 2 * padding}x{wd + 2 * padding}"
        )
    out_h = conv_output_size(h, kh, stride, padding, dilation)
    out_w = conv_output_size(wd, kw, stride, padding, dilation)

    xd, wmat = x.data, w.data.reshape(cout, -1)
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = xd.reshape(n, cin, h * wd)
        xp_shape = None
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        xp_shape = xp.shape
        cols = np.empty((n, cin, kh, kw, out_h, out_w), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                si, sj = _tap_slices(i, j, dilation, stride, out_h, out_w)
                cols[:, :, i, j] = xp[:, :, si, sj]
        cols = cols.reshape(n, cin * kh * kw, out_h * out_w)

    out = np.matmul(wmat, cols)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape(n, cout, out_h, out_w)

    def backward(g):
        g = g.reshape(n, cout, out_h * out_w)
        gw = gb = gx = None
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g)
            if pointwise:
                gx = gcols.reshape(x.shape)
            else:
                gcols = gcols.reshape(n, cin, kh, kw, out_h, out_w)
                gxp = np.zeros(xp_shape, dtype=xd.dtype)
                for i in range(kh):
                    for j in range(kw):
                        si, sj = _tap_slices(i, j, dilation, stride, out_h, out_w)
                        gxp[:, :, si, sj] += gcols[:, :, i, j]
                gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward)


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    """Max pooling with implicit -inf padding. Ties route gradient to the first maximum."""
    _require_nchw(x, "max_pool2d")
    n, c, h, w = x.shape
    if kernel > h + 2 * padding or kernel > w + 2 * padding:
        raise GeometryError("pooling window larger than padded input")
    out_h = conv_output_size(h, kernel, stride, padding)
    out_w = conv_output_size(w, kernel, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    windows = np.empty((kernel * kernel, n, c, out_h, out_w), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            si, sj = _tap_slices(i, j, 1, stride, out_h, out_w)
            windows[i * kernel + j] = xp[:, :, si, sj]
    arg = windows.argmax(axis=0)
    out = np.take_along_axis(windows, arg[None], axis=0)[0]

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for k in range(kernel * kernel):
            i, j = divmod(k, kernel)
            si, sj = _tap_slices(i, j, 1, stride, out_h, out_w)
            gxp[:, :, si, sj] += np.where(arg == k, g, 0)
        return (gxp[:, :, padding : padding + h, padding : padding + w],)

    return make_op(out, (x,), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Optional[np.ndarray] = None,
    running_var: Optional[np.ndarray] = None,
    training: bool = True,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel batch normalization.

    Training mode normalizes with the biased batch variance and, when
    running buffers are given, updates them in place (running variance uses
    the unbiased estimate). Eval mode uses the running buffers.
    """
    _require_nchw(x, "batch_norm")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"gamma/beta must have shape ({c},)")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    xd = x.data
    shape = (1, c, 1, 1)
    if training:
        count = n * h * w
        if count < 2:
            raise DegenerateVarianceError(
                "batch_norm in training mode needs more than one value per channel"
            )
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        if running_mean is not None:
            running_mean *= 1 - momentum
            running_mean += momentum * mu
        if running_var is not None:
            running_var *= 1 - momentum
            running_var += momentum * var * (count / (count - 1))
    else:
        if running_mean is None or running_var is None:
            raise ValueError("eval-mode batch_norm needs running statistics")
        mu, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(shape).astype(xd.dtype)) * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(shape)
            if training:
                m1 = gxhat.mean(axis=(0, 2, 3), keepdims=True)
                m2 = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                gx = (gxhat - m1 - xhat * m2) * inv_std.reshape(shape)
            else:
                gx = gxhat * inv_std.reshape(shape)
        return gx, ggamma, gbeta

    return make_op(out, (x, gamma, beta), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = 1, eps: float = 1e-5) -> Tensor:
    """Normalize over one axis per position; ``gamma``/``beta`` have that axis' extent."""
    axis = axis % x.ndim
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"gamma/beta must have shape ({c},)")
    shape = [1] * x.ndim
    shape[axis] = c
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    inv_std = 1.0 / np.sqrt(xd.var(axis=axis, keepdims=True) + eps)
    xhat = (xd - mu) * inv_std
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        ggamma = (g * xhat).sum(axis=reduce_axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=reduce_axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(shape)
            m1 = gxhat.mean(axis=axis, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=axis, keepdims=True)
            gx = (gxhat - m1 - xhat * m2) * inv_std
        return gx, ggamma, gbeta

    return make_op(out.astype(xd.dtype, copy=False), (x, gamma, beta), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_op(out, (x,), backward)


# -- separable linear resampling ----------------------------------------------

def adaptive_pool_matrix(size: int, out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic ``[out, size]`` averaging matrix.

    Bin ``i`` covers ``floor(i*size/out) .. ceil((i+1)*size/out)``.
    """
    m = np.zeros((out, size), dtype=dtype)
    for i in range(out):
        start = (i * size) // out
        end = -((-(i + 1) * size) // out)
        m[i, start:end] = 1.0 / (end - start)
    return m


def bilinear_matrix(size: int, out: int, align_corners: bool = False, dtype=np.float64) -> np.ndarray:
    """``[out, size]`` 1-d linear interpolation matrix.

    With ``align_corners=False`` sample positions use half-pixel centers,
    ``src = (dst + 0.5) * size / out - 0.5``, clamped below at 0.
    """
    m = np.zeros((out, size), dtype=dtype)
    for d in range(out):
        if align_corners:
            src = d * (size - 1) / (out - 1) if out > 1 else 0.0
        else:
            src = max((d + 0.5) * size / out - 0.5, 0.0)
        i0 = min(int(np.floor(src)), size - 1)
        i1 = min(i0 + 1, size - 1)
        frac = src - i0
        m[d, i0] += 1.0 - frac
        m[d, i1] += frac
    return m


def _separable(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    mh = mh.astype(x.dtype, copy=False)
    mw = mw.astype(x.dtype, copy=False)
    # out[n,c] = mh @ x[n,c] @ mw.T
    out = np.matmul(np.matmul(mh, x.data), mw.T)

    def backward(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return make_op(out, (x,), backward)


def adaptive_avg_pool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    _require_nchw(x, "adaptive_avg_pool2d")
    h, w = x.shape[2:]
    if not (1 <= out_h <= h and 1 <= out_w <= w):
        raise GeometryError(f"cannot pool {h}x{w} to {out_h}x{out_w}")
    return _separable(x, adaptive_pool_matrix(h, out_h), adaptive_pool_matrix(w, out_w))


def bilinear_upsample(x: Tensor, out_h: int, out_w: int, align_corners: bool = False) -> Tensor:
    """Bilinear resize (up or down) of the two spatial axes."""
    _require_nchw(x, "bilinear_upsample")
    if out_h < 1 or out_w < 1:
        raise GeometryError("output extents must be >= 1")
    h, w = x.shape[2:]
    return _separable(
        x, bilinear_matrix(h, out_h, align_corners), bilinear_matrix(w, out_w, align_corners)
    )
