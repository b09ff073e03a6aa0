"""Differentiable operations.

Every op takes ``Tensor`` (or array-like constants), computes the forward
value with numpy and, when any input is tracked, records a backward closure
returning one gradient per parent.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _const(b, a)
    b = as_tensor(b)
    return _const(a, b), b


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_result(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), bw)


def square(x: Tensor) -> Tensor:
    xd = x.data

    def bw(g):
        return (2.0 * xd * g,)

    return make_result(xd * xd, (x,), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.maximum(x.data, 0).astype(x.data.dtype, copy=False)  # keeps NaN visible

    def bw(g):
        return (g * mask,)

    return make_result(out, (x,), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = _binary_operands(a, b)
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def bw(g):
        return (_unbroadcast(g * take_a, a.shape) if a.requires_grad else None,
                _unbroadcast(g * ~take_a, b.shape) if b.requires_grad else None)

    return make_result(out, (a, b), bw)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out, dtype=x.data.dtype), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def amax(x: Tensor) -> Tensor:
    """Global maximum; gradient goes to the first maximal entry."""
    flat = x.data.reshape(-1)
    idx = int(np.argmax(flat))
    shape = x.shape

    def bw(g):
        out = np.zeros(flat.shape, dtype=g.dtype)
        out[idx] = g.reshape(-1)[0]
        return (out.reshape(shape),)

    return make_result(np.asarray(flat[idx]), (x,), bw)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape

    def bw(g):
        return (g.reshape(old),)

    return make_result(x.data.reshape(shape), (x,), bw)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (-1,))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inv),)

    return make_result(x.data.transpose(axes), (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        index = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(int(lo), int(hi))
            grads.append(g[tuple(index)])
        return tuple(grads)

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour x2 upsampling over the last two axes."""
    out = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)

    def bw(g):
        *lead, h2, w2 = g.shape
        return (g.reshape(*lead, h2 // 2, 2, w2 // 2, 2).sum(axis=(-3, -1)),)

    return make_result(out, (x,), bw)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 on a (C, H, W) tensor; H and W must be even."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {x.shape}")
    win = x.data.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        return (gw.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)

    return make_result(out, (x,), bw)


# ---------------------------------------------------------------------------
# linear algebra and neural primitives
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; leading batch axes are allowed when both operands carry them."""
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad @ bd, (a, b), bw)


def softmax_rows(m: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    z = m.data - m.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result(y, (m,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data
    out = xhat * gd + beta.data
    n = xd.shape[-1]
    lead = tuple(range(xd.ndim - 1))

    def bw(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            gx = rstd / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                             - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        ggamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return make_result(out.astype(xd.dtype, copy=False), (x, gamma, beta), bw)


def _output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of a (C_in, H, W) input with (C_out, C_in, k, k) kernels."""
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    if x.ndim != 3 or kernels.ndim != 4:
        raise ShapeError(f"conv2d expects (C,H,W) input and (O,C,k,k) kernels, got {x.shape} and {kernels.shape}")
    c, h, w = x.shape
    o, ck, k, k2 = kernels.shape
    if ck != c or k != k2:
        raise ShapeError(f"conv2d channel/kernel mismatch: input {x.shape}, kernels {kernels.shape}")
    ho, wo = _output_size(h, k, stride, pad), _output_size(w, k, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d output would be empty: input {x.shape}, k={k}, stride={stride}, pad={pad}")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # cols: (C*k*k, Ho*Wo)
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    wmat = kernels.data.reshape(o, c * k * k)
    out = (wmat @ cols).reshape(o, ho, wo)
    parents: tuple[Tensor, ...] = (x, kernels)
    if bias is not None:
        out = out + bias.data.reshape(o, 1, 1)
        parents = parents + (bias,)

    def bw(g):
        g2 = g.reshape(o, ho * wo)
        gk = (g2 @ cols.T).reshape(kernels.shape) if kernels.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(c, k, k, ho, wo)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += dcols[:, i, j]
            gx = dxp[:, pad : pad + h, pad : pad + w] if pad else dxp
        grads = [gx, gk]
        if bias is not None:
            grads.append(g2.sum(axis=1) if bias.requires_grad else None)
        return tuple(grads)

    return make_result(out.astype(x.data.dtype, copy=False), parents, bw)
