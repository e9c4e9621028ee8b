"""Differentiable operations used by the recognizer."""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import ContractError, Tensor, as_tensor, record


class ShapeError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise and structural ---------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", out, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return record("scale", x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", x.data * mask, (x,), lambda g: (g * mask,), branch=mask)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return record("sum", np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    out = np.asarray(x.data.mean())
    return record("mean", out, (x,), lambda g: (np.broadcast_to(g / n, shape),))


# -- linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return record("matmul", out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; leading axes are batch."""
    if x.shape[-1] != w.shape[0] or (b is not None and b.shape != (w.shape[1],)):
        raise ShapeError(
            f"linear shapes x{x.shape} w{w.shape} b{None if b is None else b.shape} disagree"
        )
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return record("linear", out.reshape(lead + (w.shape[1],)), inputs, backward)


# -- convolution and pooling ------------------------------------------------------
#
# The arithmetic runs channels-last; layout="NCHW" (the default) transposes at
# the boundary, layout="NHWC" skips that for callers that stay channels-last.

def _check_layout(layout: str):
    if layout not in ("NCHW", "NHWC"):
        raise ValueError(f"unknown layout {layout!r}")


def _im2col(x: np.ndarray) -> np.ndarray:
    """[N, H, W, C] to [N*H*W, 9*C] patches, columns ordered (ky, kx, c)."""
    n, h, w, c = x.shape
    # explicit C-order buffer: np.pad keeps Fortran order for F-contiguous input
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    sn, sh, sw, sc = xp.strides
    # for a fixed (y, x, ky) the (kx, c) run is contiguous in memory
    view = as_strided(xp, shape=(n, h, w, 3, 3 * c), strides=(sn, sh, sw, sh, sc), writeable=False)
    return view.reshape(n * h * w, 9 * c)


def conv2d(x: Tensor, k: Tensor, bias: Tensor, layout: str = "NCHW") -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1 ("same" size).

    ``k`` is [Cout, Cin, 3, 3] in either layout.
    """
    _check_layout(layout)
    if x.data.ndim != 4 or k.data.ndim != 4 or k.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d expects a 4-D input and k[Cout,Cin,3,3], got {x.shape}, {k.shape}")
    xd = x.data.transpose(0, 2, 3, 1) if layout == "NCHW" else x.data
    n, h, w, cin = xd.shape
    cout = k.shape[0]
    if k.shape[1] != cin:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, kernel expects {k.shape[1]}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({cout},)")
    cols = _im2col(xd)
    kmat = k.data.transpose(2, 3, 1, 0).reshape(9 * cin, cout)
    out = cols @ kmat
    out += bias.data
    out = out.reshape(n, h, w, cout)
    if layout == "NCHW":
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        if layout == "NCHW":
            g = g.transpose(0, 2, 3, 1)
        g = np.ascontiguousarray(g)
        g2 = g.reshape(n * h * w, cout)
        gk = gb = gx = None
        if k.requires_grad:
            gk = (cols.T @ g2).reshape(3, 3, cin, cout).transpose(3, 2, 0, 1)
        if bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            # input gradient = same-size conv of g with the flipped, transposed kernel
            kflip = k.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(9 * cout, cin)
            gx = (_im2col(g) @ kflip).reshape(n, h, w, cin)
            if layout == "NCHW":
                gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
        return gx, gk, gb

    return record("conv2d", out, (x, k, bias), backward)


def maxpool2d(x: Tensor, layout: str = "NCHW") -> Tensor:
    """2x2 max-pool, stride 2. Ties go to the first element in row-major order."""
    _check_layout(layout)
    xd = x.data.transpose(0, 2, 3, 1) if layout == "NCHW" else x.data
    n, h, w, c = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d needs even spatial extents, got {h}x{w}")
    quads = [xd[:, i::2, j::2, :] for i in (0, 1) for j in (0, 1)]
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
    taken = np.zeros(out.shape, dtype=bool)
    winners = []
    for q in quads:
        win = (q == out) & ~taken
        taken |= win
        winners.append(win)
    if layout == "NCHW":
        out = out.transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward(g):
        if layout == "NCHW":
            g = g.transpose(0, 2, 3, 1)
        gx = np.zeros((n, h, w, c), dtype=g.dtype)
        for (i, j), win in zip(((0, 0), (0, 1), (1, 0), (1, 1)), winners):
            gx[:, i::2, j::2, :] = g * win
        return (np.ascontiguousarray(gx.transpose(0, 3, 1, 2)) if layout == "NCHW" else gx,)

    return record("maxpool2d", out, (x,), backward, branch=np.stack(winners))


class RunningStats:
    """Batchnorm running mean/variance, updated in place during training."""

    def __init__(self, mean: np.ndarray, var: np.ndarray):
        self.mean = mean
        self.var = var


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
    mode: str = "train",
    eps: float = 1e-5,
    momentum: float = 0.9,
    layout: str = "NCHW",
) -> Tensor:
    """Per-channel normalization over the batch and both spatial axes.

    Train mode uses batch statistics and folds them into ``running`` as
    ``momentum * old + (1 - momentum) * batch`` (unbiased batch variance);
    infer mode reads ``running`` only.
    """
    _check_layout(layout)
    if layout == "NCHW":
        n, c, h, w = x.shape
        axes, shape = (0, 2, 3), (1, c, 1, 1)
    else:
        n, h, w, c = x.shape
        axes, shape = (0, 1, 2), (1, 1, 1, c)
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d parameters must have shape ({c},)")
    if mode == "train":
        m = n * h * w
        if m < 2:
            raise DegenerateBatchError("batchnorm2d in train mode needs N*H*W >= 2")
        mean = x.data.mean(axis=axes)
        centered = x.data - mean.reshape(shape)
        var = (centered * centered).mean(axis=axes)
        running.mean[...] = momentum * running.mean + (1 - momentum) * mean
        running.var[...] = momentum * running.var + (1 - momentum) * var * (m / (m - 1))
    elif mode == "infer":
        m = None
        mean, var = running.mean.astype(x.dtype), running.var.astype(x.dtype)
        centered = x.data - mean.reshape(shape)
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(shape)
    xhat = centered * inv_std
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(shape)
        if m is None:
            gx = dxhat * inv_std
        else:
            s1 = dxhat.sum(axis=axes).reshape(shape)
            s2 = (dxhat * xhat).sum(axis=axes).reshape(shape)
            gx = (inv_std / m) * (m * dxhat - s1 - xhat * s2)
        return gx, ggamma, gbeta

    return record("batchnorm2d", out, (x, gamma, beta), backward)


# -- normalization and losses ----------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", y, (x,), backward)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over all leading positions of ``-log softmax(logits)[target]``."""
    targets = np.asarray(targets, dtype=np.int64)
    a = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets shape {targets.shape} != logits lead shape {logits.shape[:-1]}")
    if targets.size and (targets.min() < 0 or targets.max() >= a):
        raise ContractError(f"target index outside [0, {a})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)
    count = targets.size
    loss = np.asarray(-picked.sum() / count, dtype=logits.dtype)

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], -1) - 1, -1)
        return (grad * (g / count),)

    return record("cross_entropy", loss, (logits,), backward)


def attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over the source axis.

    ``q`` is [..., T, d], ``k`` and ``v`` are [..., S, d]; returns
    (context [..., T, d], weights [..., T, S]).
    """
    d = q.shape[-1]
    if k.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} disagree")
    nd = k.data.ndim
    kt = transpose(k, tuple(range(nd - 2)) + (nd - 1, nd - 2))
    scores = scale(matmul(q, kt), 1.0 / math.sqrt(d))
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), weights
