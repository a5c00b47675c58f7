"""Differentiable primitives.

Every function takes Tensors (or plain arrays/scalars where noted) and returns
a Tensor whose backward rule is registered through ``make_node``.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, as_tensor, make_node

# additive bias used for "minus infinity" in attention masks
NEG_INF = -1e9


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return make_node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return make_node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return make_node(
        ad * bd,
        (a, b),
        lambda g: (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        ),
        "mul",
    )


def div(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, 1.0 / float(b))
    a = as_tensor(a)
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_node(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        ),
        "div",
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting on the rest)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), back, "matmul")


def linear(x, w, b=None) -> Tensor:
    """x @ w + b with x (..., in), w (in, out), b (out,)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        b = as_tensor(b)
        if b.shape != (wd.shape[1],):
            raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
        out = out + b.data

    def back(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.reshape(-1, wd.shape[0]).T @ g.reshape(-1, wd.shape[1]) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.reshape(-1, wd.shape[1]).sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, back, "linear")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_node(np.log(ad), (a,), lambda g: (g / ad,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return make_node(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def swish(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    s = _sigmoid(ad)
    return make_node(ad * s, (a,), lambda g: (g * (s + ad * s * (1.0 - s)),), "swish")


def glu(a, axis: int = -1) -> Tensor:
    """First half of ``axis`` gated by the sigmoid of the second half."""
    a = as_tensor(a)
    n = a.shape[axis]
    if n % 2:
        raise DimensionError(f"glu: axis {axis} of {a.shape} has odd size")
    first, second = np.split(a.data, 2, axis=axis)
    s = _sigmoid(second)

    def back(g):
        return (np.concatenate([g * s, g * first * s * (1.0 - s)], axis=axis),)

    return make_node(first * s, (a,), back, "glu")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (a,), back, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (a,), back, "log_softmax")


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp; all ``-inf`` slices give ``-inf`` with zero gradient."""
    a = as_tensor(a)
    ad = a.data
    m = ad.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out_k = np.log(np.exp(ad - m).sum(axis=axis, keepdims=True)) + m
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def back(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        with np.errstate(invalid="ignore"):
            w = np.exp(ad - out_k)
        w = np.where(np.isfinite(out_k), w, 0.0)
        return (gk * w,)

    return make_node(out, (a,), back, "logsumexp")


def layer_norm(x, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis; a constant row maps to zeros before the affine."""
    x = as_tensor(x)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat
    wd = None
    if weight is not None:
        weight = as_tensor(weight)
        if weight.shape != (xd.shape[-1],):
            raise DimensionError(f"layer_norm: weight {weight.shape} does not match input {x.shape}")
        wd = weight.data
        out = out * wd
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    n = xd.shape[-1]

    def back(g):
        gh = g * wd if wd is not None else g
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if weight is not None:
            grads.append((g * xhat).reshape(-1, n).sum(axis=0))
        if bias is not None:
            grads.append(g.reshape(-1, n).sum(axis=0))
        return tuple(grads)

    parents = [x] + [p for p in (weight, bias) if p is not None]
    return make_node(out, parents, back, "layer_norm")


def depthwise_conv1d(x, w, b=None) -> Tensor:
    """Per-channel 'same' convolution along time: x (B, T, C), w (K, C) with odd K."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 2 or w.shape[1] != x.shape[2] or w.shape[0] % 2 == 0:
        raise DimensionError(f"depthwise_conv1d: input {x.shape} and kernel {w.shape} do not fit")
    k = w.shape[0]
    pad = k // 2
    bsz, t, c = x.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    wd = w.data
    out = np.zeros_like(x.data)
    for i in range(k):
        out += xp[:, i : i + t] * wd[i]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for i in range(k):
            gxp[:, i : i + t] += g * wd[i]
            gw[i] = (g * xp[:, i : i + t]).sum(axis=(0, 1))
        grads = [gxp[:, pad : pad + t], gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 1)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, back, "depthwise_conv1d")


def conv1d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Full 1-D convolution along time: x (B, T, Cin), w (K, Cin, Cout)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or w.shape[1] != x.shape[2]:
        raise DimensionError(f"conv1d: input {x.shape} and kernel {w.shape} do not fit")
    k, cin, cout = w.shape
    bsz, t, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0)))
    t_out = (t + 2 * padding - k) // stride + 1
    if t_out <= 0:
        raise DimensionError(f"conv1d: input length {t} too short for kernel {k}")
    idx = np.arange(t_out)[:, None] * stride + np.arange(k)[None, :]
    cols = xp[:, idx].reshape(bsz, t_out, k * cin)
    w2 = w.data.reshape(k * cin, cout)
    out = cols @ w2
    if b is not None:
        b = as_tensor(b)
        out = out + b.data

    def back(g):
        gcols = (g @ w2.T).reshape(bsz, t_out, k, cin)
        gxp = np.zeros_like(xp)
        for i in range(k):
            gxp[:, idx[:, i]] += gcols[:, :, i]
        gw = (cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)).reshape(k, cin, cout)
        grads = [gxp[:, padding : padding + t], gw]
        if b is not None:
            grads.append(g.reshape(-1, cout).sum(axis=0))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, back, "conv1d")


def embedding(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"embedding: ids out of range for table {table.shape}")
    shape = table.shape

    def back(g):
        gt = np.zeros(shape, dtype=g.dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)

    return make_node(table.data[ids], (table,), back, "embedding")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, tensors, back, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"stack: shapes {[t.shape for t in tensors]}") from None

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_node(out, tensors, back, "stack")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = np.argsort(axes)
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from None
    old = a.shape
    return make_node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def take(a, index) -> Tensor:
    """numpy indexing (slices or integer arrays); repeated indices accumulate in backward."""
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as exc:
        raise DimensionError(f"take: {exc} for shape {a.shape}") from None
    shape = a.shape

    def back(g):
        ga = np.zeros(shape, dtype=g.dtype)
        np.add.at(ga, index, g)
        return (ga,)

    return make_node(np.array(out, copy=True), (a,), back, "take")


def masked_fill(a, mask, value: float = NEG_INF) -> Tensor:
    """Set entries where ``mask`` is true to ``value``; those entries get no gradient."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    _broadcast_check("masked_fill", a, Tensor(np.zeros(mask.shape)))
    keep = ~mask
    return make_node(
        np.where(mask, value, a.data),
        (a,),
        lambda g: (_unbroadcast(g * keep, a.shape),),
        "masked_fill",
    )


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.asarray(out), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def dropout(a, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity unless ``training`` with p > 0 and an rng."""
    a = as_tensor(a)
    if not training or p <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return make_node(a.data * keep, (a,), lambda g: (g * keep,), "dropout")
