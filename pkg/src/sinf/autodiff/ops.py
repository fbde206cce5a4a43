"""Differentiable operations.

Every op computes its forward value with numpy and records a closure that
maps the output cotangent to input cotangents. Broadcasting follows numpy;
cotangents are summed back to the operand shapes.
"""
from __future__ import annotations

import numpy as np

from .tensor import DomainError, ShapeError, Tensor, as_tensor, record

LAYER_NORM_EPS = 1e-5


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(kind: str, a: np.ndarray, b: np.ndarray) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# --- elementwise binary ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return record("add", (a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.data, b.data)
    sa, sb = a.shape, b.shape
    return record("sub", (a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.data, b.data)
    ad, bd = a.data, b.data
    na, nb = a.node_id is not None, b.node_id is not None

    def vjp(g):
        return (_unbroadcast(g * bd, ad.shape) if na else None,
                _unbroadcast(g * ad, bd.shape) if nb else None)
    return record("mul", (a, b), ad * bd, vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.data, b.data)
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd
    na, nb = a.node_id is not None, b.node_id is not None

    def vjp(g):
        return (_unbroadcast(g / bd, ad.shape) if na else None,
                _unbroadcast(-g * out / bd, bd.shape) if nb else None)
    return record("div", (a, b), out, vjp)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("maximum", a.data, b.data)
    pick_a = a.data >= b.data
    sa, sb = a.shape, b.shape
    return record("maximum", (a, b), np.where(pick_a, a.data, b.data),
                  lambda g: (_unbroadcast(np.where(pick_a, g, 0.0), sa),
                             _unbroadcast(np.where(pick_a, 0.0, g), sb)))


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("minimum", a.data, b.data)
    pick_a = a.data <= b.data
    sa, sb = a.shape, b.shape
    return record("minimum", (a, b), np.where(pick_a, a.data, b.data),
                  lambda g: (_unbroadcast(np.where(pick_a, g, 0.0), sa),
                             _unbroadcast(np.where(pick_a, 0.0, g), sb)))


def where(cond, a, b) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record("where", (a, b), np.where(cond, a.data, b.data),
                  lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa),
                             _unbroadcast(np.where(cond, 0.0, g), sb)))


# --- elementwise unary ----------------------------------------------------

def neg(x) -> Tensor:
    x = as_tensor(x)
    return record("neg", (x,), -x.data, lambda g: (-g,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return record("exp", (x,), out, lambda g: (g * out,))


def expm1(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record("expm1", (x,), np.expm1(xd), lambda g: (g * np.exp(xd),))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log: input must be strictly positive")
    xd = x.data
    return record("log", (x,), np.log(xd), lambda g: (g / xd,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt: input must be nonnegative")
    out = np.sqrt(x.data)
    return record("sqrt", (x,), out, lambda g: (0.5 * g / out,))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record("square", (x,), xd * xd, lambda g: (2.0 * g * xd,))


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record("power", (x,), xd ** p, lambda g: (g * p * xd ** (p - 1),))


def abs(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    sign = np.where(x.data >= 0, 1.0, -1.0)
    return record("abs", (x,), np.abs(x.data), lambda g: (g * sign,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    return record("relu", (x,), np.where(on, x.data, 0.0), lambda g: (g * on,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def softplus(x) -> Tensor:
    """log(1 + e^x), computed stably."""
    x = as_tensor(x)
    xd = x.data
    return record("softplus", (x,), _softplus(xd), lambda g: (g * _sigmoid(xd),))


def log_sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record("log_sigmoid", (x,), -_softplus(-xd), lambda g: (g * _sigmoid(-xd),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return record("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes where lo <= x <= hi."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return record("clip", (x,), np.clip(x.data, lo, hi), lambda g: (g * inside,))


# --- reductions -----------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g: np.ndarray, shape: tuple, axes: tuple, keepdims: bool) -> np.ndarray:
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape
    out = np.sum(x.data, axis=axes, keepdims=keepdims)
    return record("sum", (x,), np.asarray(out, dtype=np.float64),
                  lambda g: (_expand_reduced(g, shape, axes, keepdims),))


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape
    count = int(np.prod([shape[a] for a in axes])) if axes else 1
    out = np.mean(x.data, axis=axes, keepdims=keepdims)
    return record("mean", (x,), np.asarray(out, dtype=np.float64),
                  lambda g: (_expand_reduced(g, shape, axes, keepdims) / count,))


def l1_distance(a, b, axis=None) -> Tensor:
    """Sum of absolute differences."""
    return sum(abs(sub(a, b)), axis=axis)


def l2_norm(x, axis=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the gradient at the zero vector is taken as zero."""
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    xd = x.data
    out = np.sqrt(np.sum(xd * xd, axis=axes, keepdims=True))
    safe = np.where(out > 0, out, 1.0)
    shape = x.shape
    result = out if keepdims else np.squeeze(out, axis=axes)

    def vjp(g):
        g = _expand_reduced(g, out.shape, axes, keepdims) if not keepdims else g
        return (np.broadcast_to(g, shape) * xd / safe * (out > 0),)
    return record("l2_norm", (x,), np.asarray(result, dtype=np.float64), vjp)


# --- linear algebra and shape ---------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions differ for shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data
    na, nb = a.node_id is not None, b.node_id is not None

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if na else None
        gb = None
        if nb and bd.ndim == 2:
            # a shared weight matrix: fold all batch axes into one product
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        elif nb:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb
    return record("matmul", (a, b), ad @ bd, vjp)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} into {tuple(shape)}") from None
    return record("reshape", (x,), out, lambda g: (g.reshape(src),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return record("transpose", (x,), np.transpose(x.data, axes),
                  lambda g: (np.transpose(g, inv),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return record("swapaxes", (x,), np.swapaxes(x.data, a1, a2),
                  lambda g: (np.swapaxes(g, a1, a2),))


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: need at least one tensor")
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape} on axis {ax}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=ax))
    return record("concat", ts, np.concatenate([t.data for t in ts], axis=ax), vjp)


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ: {sorted(shapes)}")
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def vjp(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))
    return record("stack", ts, out, vjp)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(
        isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items
    )


def index_add(shape: tuple, idx: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Scatter-add rows of ``g`` into a zero array of ``shape`` along axis 0."""
    n = shape[0]
    idx = np.asarray(idx).reshape(-1)
    rest = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    g2 = g.reshape(idx.size, rest)
    if rest == 1:
        return np.bincount(idx, weights=g2[:, 0], minlength=n).reshape(shape)
    if rest <= 16:
        cols = [np.bincount(idx, weights=g2[:, c], minlength=n) for c in range(rest)]
        return np.stack(cols, axis=1).reshape(shape)
    out = np.zeros((n, rest))
    np.add.at(out, idx, g2)
    return out.reshape(shape)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data[index]
    if _is_basic_index(index):
        def vjp(g):
            z = np.zeros(shape)
            z[index] = g
            return (z,)
    else:
        def vjp(g):
            z = np.zeros(shape)
            np.add.at(z, index, g)
            return (z,)
    return record("getitem", (x,), np.array(out, dtype=np.float64), vjp)


def take(x, idx, axis: int = 0) -> Tensor:
    """Gather entries along ``axis`` (differentiable in ``x``)."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape
    ax = axis % x.ndim
    out = np.take(x.data, idx, axis=ax)

    def vjp(g):
        if ax == 0:
            return (index_add(shape, idx, g),)
        gm = np.moveaxis(g, list(range(ax, ax + idx.ndim)), list(range(idx.ndim)))
        moved = (shape[ax],) + tuple(s for i, s in enumerate(shape) if i != ax)
        z = index_add(moved, idx, gm)
        return (np.moveaxis(z, 0, ax),)
    return record("take", (x,), out, vjp)


def segment_sum(x, segment_ids, n_segments: int) -> Tensor:
    """Sum rows of ``x`` sharing a segment id (axis 0)."""
    x = as_tensor(x)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != x.shape[0]:
        raise ShapeError(f"segment_sum: ids of shape {seg.shape} for values of shape {x.shape}")
    out = index_add((n_segments,) + x.shape[1:], seg, x.data)
    return record("segment_sum", (x,), out, lambda g: (g[seg],))


# --- composite-but-fused nonlinearities -----------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)
    return record("softmax", (x,), out, vjp)


def attention(q, k, v, scale: float) -> Tensor:
    """softmax(scale * q k^T) v over the last two axes, as one recorded op."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if not (q.shape == k.shape == v.shape) or q.ndim < 2:
        raise ShapeError(f"attention: q, k, v must share one (..., T, D) shape, got {q.shape}, {k.shape}, {v.shape}")
    qd, kd, vd = q.data, k.data, v.data
    s = (qd @ np.swapaxes(kd, -1, -2)) * scale
    s -= np.max(s, axis=-1, keepdims=True)
    a = np.exp(s)
    a /= np.sum(a, axis=-1, keepdims=True)

    def vjp(g):
        gv = np.swapaxes(a, -1, -2) @ g
        ga = g @ np.swapaxes(vd, -1, -2)
        gs = a * (ga - np.sum(ga * a, axis=-1, keepdims=True))
        gs *= scale
        return gs @ kd, np.swapaxes(gs, -1, -2) @ qd, gv
    return record("attention", (q, k, v), a @ vd, vjp)


def layer_norm(x, gamma=None, beta=None, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    x = as_tensor(x)
    xd = x.data
    n = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    inputs = [x]
    gd = bd = None
    if gamma is not None:
        gamma = as_tensor(gamma)
        if gamma.shape != (n,):
            raise ShapeError(f"layer_norm: gamma shape {gamma.shape} does not match features {n}")
        gd = gamma.data
        inputs.append(gamma)
    if beta is not None:
        beta = as_tensor(beta)
        if beta.shape != (n,):
            raise ShapeError(f"layer_norm: beta shape {beta.shape} does not match features {n}")
        bd = beta.data
        inputs.append(beta)
    out = xhat
    if gd is not None:
        out = out * gd
    if bd is not None:
        out = out + bd

    def vjp(g):
        gx_hat = g * gd if gd is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        red = tuple(range(g.ndim - 1))
        if gd is not None:
            grads.append(np.sum(g * xhat, axis=red))
        if bd is not None:
            grads.append(np.sum(g, axis=red))
        return tuple(grads)
    return record("layer_norm", inputs, out, vjp)


def linear(x, weight, bias=None) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 1:
        y = reshape(matmul(reshape(x, (1, -1)), weight), (-1,))
    else:
        y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


# --- convolutions ---------------------------------------------------------

def _conv3d_cols(xp: np.ndarray, k: int, s: int, out_sz: tuple) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    win = win[:, ::s, ::s, ::s][:, : out_sz[0], : out_sz[1], : out_sz[2]]
    c = xp.shape[0]
    return win.transpose(1, 2, 3, 0, 4, 5, 6).reshape(-1, c * k * k * k)


def conv3d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Single-sample 3-D convolution.

    x: (C_in, D, H, W); weight: (C_out, C_in, k, k, k); bias: (C_out,).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 5 or weight.shape[1] != x.shape[0]:
        raise ShapeError(f"conv3d: input {x.shape} incompatible with weight {weight.shape}")
    cout, cin, k = weight.shape[0], weight.shape[1], weight.shape[2]
    s, p = stride, padding
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (p, p)))
    dims = tuple((xp.shape[i + 1] - k) // s + 1 for i in range(3))
    if min(dims) < 1:
        raise ShapeError(f"conv3d: kernel {k} too large for input {x.shape}")
    cols = _conv3d_cols(xp, k, s, dims)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        inputs.append(bias)
    out_t = out.T.reshape((cout,) + dims)
    xshape = x.shape
    nx = x.node_id is not None

    def vjp(g):
        g2 = g.reshape(cout, -1).T
        gw = (g2.T @ cols).reshape(weight.shape)
        gx = None
        if nx:
            gcols = (g2 @ wmat).reshape(dims + (cin, k, k, k))
            gxp = np.zeros(xp.shape)
            for a in range(k):
                for b in range(k):
                    for c in range(k):
                        gxp[:, a:a + s * dims[0]:s, b:b + s * dims[1]:s, c:c + s * dims[2]:s] += (
                            gcols[..., a, b, c].transpose(3, 0, 1, 2)
                        )
            gx = gxp[:, p:p + xshape[1], p:p + xshape[2], p:p + xshape[3]]
        res = [gx, gw]
        if bias is not None:
            res.append(g2.sum(axis=0))
        return tuple(res)
    return record("conv3d", inputs, out_t, vjp)


def _col2im_2d(cols: np.ndarray, c: int, k: int, s: int, h: int, w: int, hp: int, wp: int) -> np.ndarray:
    """cols: (h*w, c*k*k) -> scatter into (c, hp, wp)."""
    cols = cols.reshape(h, w, c, k, k)
    out = np.zeros((c, hp, wp))
    for a in range(k):
        for b in range(k):
            out[:, a:a + s * h:s, b:b + s * w:s] += cols[:, :, :, a, b].transpose(2, 0, 1)
    return out


def _im2col_2d(xp: np.ndarray, k: int, s: int, h: int, w: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::s, ::s][:, :h, :w]
    c = xp.shape[0]
    return win.transpose(1, 2, 0, 3, 4).reshape(h * w, c * k * k)


def conv_transpose2d(x, weight, bias=None, stride: int = 2, padding: int = 1) -> Tensor:
    """Single-sample 2-D transposed convolution.

    x: (C_in, H, W); weight: (C_in, C_out, k, k); output spatial size is
    (H - 1) * stride - 2 * padding + k.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[0] != x.shape[0]:
        raise ShapeError(f"conv_transpose2d: input {x.shape} incompatible with weight {weight.shape}")
    cin, cout, k = weight.shape[0], weight.shape[1], weight.shape[2]
    s, p = stride, padding
    h, w = x.shape[1], x.shape[2]
    hp, wp = (h - 1) * s + k, (w - 1) * s + k
    ho, wo = hp - 2 * p, wp - 2 * p
    xmat = x.data.reshape(cin, h * w)
    wmat = weight.data.reshape(cin, cout * k * k)
    cols = xmat.T @ wmat
    full = _col2im_2d(cols, cout, k, s, h, w, hp, wp)
    out = full[:, p:p + ho, p:p + wo]
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None, None]
        inputs.append(bias)
    else:
        out = np.ascontiguousarray(out)
    nx = x.node_id is not None

    def vjp(g):
        gp = np.zeros((cout, hp, wp))
        gp[:, p:p + ho, p:p + wo] = g
        gcols = _im2col_2d(gp, k, s, h, w)
        gw = (xmat @ gcols).reshape(weight.shape)
        gx = (gcols @ wmat.T).T.reshape(x.shape) if nx else None
        res = [gx, gw]
        if bias is not None:
            res.append(g.sum(axis=(1, 2)))
        return tuple(res)
    return record("conv_transpose2d", inputs, out, vjp)


# Public table of elementary op kinds, used by the gradient audit.
OP_KINDS = (
    "add", "sub", "mul", "div", "matmul", "relu", "sigmoid", "exp", "log",
    "softmax", "layer_norm", "concat", "slice", "sum", "mean", "l1_distance",
    "l2_norm",
)


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch one of the named elementary ops by kind."""
    table = {
        "add": add, "sub": sub, "mul": mul, "div": div, "matmul": matmul,
        "relu": relu, "sigmoid": sigmoid, "exp": exp, "log": log,
        "softmax": softmax, "layer_norm": layer_norm, "concat": lambda *t, **kw: concat(t, **kw),
        "slice": getitem, "sum": sum, "mean": mean, "l1_distance": l1_distance,
        "l2_norm": l2_norm,
    }
    try:
        fn = table[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; expected one of {OP_KINDS}") from None
    return fn(*inputs, **kwargs)


__all__ = [n for n in dir() if not n.startswith("_") and n not in {"builtins", "np"}]
