"""Differentiable primitives.

Every primitive takes Tensors, computes its output with numpy and registers a
backward rule returning one gradient per input (``None`` for inputs that do
not need one). Image tensors use NCHW layout.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Tensor, make_node

PRIMITIVES = {}


def primitive(kind):
    def register(fn):
        PRIMITIVES[kind] = fn
        return fn
    return register


def apply_primitive(kind, inputs, **attrs):
    """Dispatch ``kind`` on ``inputs`` with per-kind keyword attributes."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **attrs)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(kind, f"cannot broadcast {a.shape} with {b.shape}") from None


# --- elementwise -------------------------------------------------------------

@primitive("add")
def add(a, b):
    _check_broadcast("add", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return make_node("add", a.data + b.data, (a, b), back)


@primitive("sub")
def sub(a, b):
    _check_broadcast("sub", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return make_node("sub", a.data - b.data, (a, b), back)


@primitive("mul")
def mul(a, b):
    _check_broadcast("mul", a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return make_node("mul", a.data * b.data, (a, b), back)


@primitive("scale")
def scale(x, factor):
    return make_node("scale", x.data * factor, (x,), lambda g: (g * factor,))


@primitive("square")
def square(x):
    return make_node("square", x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


@primitive("log")
def log(x):
    if np.any(x.data <= 0):
        raise ShapeError("log", "input must be strictly positive")
    return make_node("log", np.log(x.data), (x,), lambda g: (g / x.data,))


@primitive("reciprocal")
def reciprocal(x):
    with np.errstate(divide="ignore"):
        out = 1.0 / x.data
    return make_node("reciprocal", out, (x,), lambda g: (-g * out * out,))


@primitive("relu")
def relu(x):
    mask = x.data > 0
    return make_node("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


@primitive("clamp")
def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient passes only where the input is inside."""
    inside = (x.data >= lo) & (x.data <= hi)
    return make_node("clamp", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# --- reductions and reshaping ------------------------------------------------

@primitive("sum")
def sum_(x, axis=None, keepdims=False):
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return make_node("sum", np.asarray(out, dtype=np.float64), (x,), back)


@primitive("mean")
def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum_(x, axis=axis, keepdims=keepdims), factor=1.0 / n)


@primitive("abs_sum")
def abs_sum(x):
    sign = np.sign(x.data)
    return make_node("abs_sum", np.asarray(np.abs(x.data).sum()), (x,),
                     lambda g: (g * sign,))


@primitive("reshape")
def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape {x.shape} to {shape}") from None
    return make_node("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


@primitive("concat")
def concat(*xs, axis=1):
    """Concatenate along ``axis`` (channel axis for images)."""
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or any(
                t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)):
            raise ShapeError("concat", f"shapes {ref} and {t.shape} differ off axis {axis}")
    out = np.concatenate([t.data for t in xs], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))
    return make_node("concat", out, xs, back)


@primitive("gather_rows")
def gather_rows(table, index):
    """Select one row per (sample, neuron) from a (K, R, D) weight table.

    ``index`` is an integer array of shape (B, K); the output has shape
    (B, K, D) with ``out[b, k] = table[k, index[b, k]]``.
    """
    index = np.asarray(index)
    k = table.shape[0]
    if index.ndim != 2 or index.shape[1] != k:
        raise ShapeError("gather_rows", f"index shape {index.shape} does not match table {table.shape}")
    rows = np.arange(k)[None, :]
    out = table.data[rows, index]

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, (np.broadcast_to(rows, index.shape), index), g)
        return (gt,)
    return make_node("gather_rows", out, (table,), back)


# --- dense layers ------------------------------------------------------------

@primitive("matmul")
def matmul(a, b):
    if a.shape[-1] != b.shape[0] or b.ndim != 2:
        raise ShapeError("matmul", f"inner dims differ: {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb
    return make_node("matmul", a.data @ b.data, (a, b), back)


@primitive("linear")
def linear(x, weight, bias=None):
    """Fully connected layer: ``x @ weight.T + bias`` with x of shape (B, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError("linear", f"input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError("linear", f"bias {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        grads = (g @ weight.data, g.T @ x.data)
        if bias is not None:
            grads += (g.sum(axis=0),)
        return grads
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node("linear", out, parents, back)


# --- convolutions ------------------------------------------------------------

def _conv_same(x, w):
    k = w.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))
    return np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2), cols


@primitive("conv2d")
def conv2d(x, weight, bias=None):
    """Stride-1 convolution with zero "same" padding (odd square kernels)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d", f"expected 4-d input and weight, got {x.shape}, {weight.shape}")
    o, c, kh, kw = weight.shape
    if x.shape[1] != c:
        raise ShapeError("conv2d", f"input channels {x.shape[1]} != weight in-channels {c}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError("conv2d", f"kernel must be odd and square, got {kh}x{kw}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError("conv2d", f"bias {bias.shape} != ({o},)")
    out, cols = _conv_same(x.data, weight.data)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def back(g):
        gx = None
        if x.requires_grad:
            flipped = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx, _ = _conv_same(g, np.ascontiguousarray(flipped))
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node("conv2d", out, parents, back)


@primitive("conv_transpose2d")
def conv_transpose2d(x, weight, bias=None):
    """2x2 transposed convolution with stride 2 (doubles H and W).

    ``weight`` has shape (in_channels, out_channels, 2, 2).
    """
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[2:] != (2, 2):
        raise ShapeError("conv_transpose2d", f"bad shapes {x.shape}, {weight.shape}")
    c, o = weight.shape[:2]
    if x.shape[1] != c:
        raise ShapeError("conv_transpose2d", f"input channels {x.shape[1]} != {c}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError("conv_transpose2d", f"bias {bias.shape} != ({o},)")
    b, _, h, w = x.shape
    t = np.tensordot(x.data, weight.data, axes=([1], [0]))  # B,H,W,O,2,2
    out = t.transpose(0, 3, 1, 4, 2, 5).reshape(b, o, 2 * h, 2 * w)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def back(g):
        g6 = g.reshape(b, o, h, 2, w, 2)
        gx = np.tensordot(g6, weight.data, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(x.data, g6, axes=([0, 2, 3], [0, 2, 4]))
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node("conv_transpose2d", out, parents, back)


@primitive("maxpool2d")
def maxpool2d(x):
    """2x2 max pooling, stride 2; odd extents are floored (65 -> 32)."""
    if x.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError("maxpool2d", f"need NCHW with H, W >= 2, got {x.shape}")
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    blocks = (x.data[:, :, :2 * h2, :2 * w2]
              .reshape(b, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros((b, c, h2, w2, 4))
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros(x.shape)
        gx[:, :, :2 * h2, :2 * w2] = (gb.reshape(b, c, h2, w2, 2, 2)
                                      .transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2))
        return (gx,)
    return make_node("maxpool2d", out, (x,), back)


def interp_matrix(n_in, n_out):
    """Linear interpolation matrix (n_out, n_in), half-pixel centres, edge clamped."""
    m = np.zeros((n_out, n_in))
    scale_ = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale_ - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


@primitive("upsample_bilinear")
def upsample_bilinear(x, size):
    """Bilinear resize of the two trailing axes to ``size`` = (H, W)."""
    if x.ndim != 4:
        raise ShapeError("upsample_bilinear", f"expected NCHW, got {x.shape}")
    rh = interp_matrix(x.shape[2], size[0])
    rw = interp_matrix(x.shape[3], size[1])
    out = np.matmul(np.matmul(rh, x.data), rw.T)
    return make_node("upsample_bilinear", out, (x,), lambda g: (np.matmul(np.matmul(rh.T, g), rw),))


# --- normalisation -----------------------------------------------------------

@primitive("batchnorm2d")
def batchnorm2d(x, gamma, beta, running_mean, running_var, training=True,
                momentum=0.1, eps=1e-5, update_stats=True):
    """Per-channel batch normalisation.

    Train mode normalises with batch statistics (biased variance) and, when
    ``update_stats``, moves the running averages (numpy arrays, updated in
    place; unbiased variance) by ``momentum``. Eval mode uses the running
    averages.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("batchnorm2d", f"input {x.shape} vs affine {gamma.shape}/{beta.shape}")
    axes = (0, 2, 3)
    bshape = (1, -1, 1, 1)
    if training:
        if x.shape[0] < 2:
            raise ShapeError("batchnorm2d", "train mode needs batch size >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update_stats:
            n = x.data.size // x.shape[1]
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * n / (n - 1)
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def back(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            n = x.data.size // x.shape[1]
            gx = (inv.reshape(bshape) / n) * (
                n * dxhat - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape))
        else:
            gx = dxhat * inv.reshape(bshape)
        return gx, gg, gb
    return make_node("batchnorm2d", out, (x, gamma, beta), back)


# --- losses ------------------------------------------------------------------

@primitive("mse")
def mse(pred, target):
    """Mean squared error over all elements."""
    if pred.shape != target.shape:
        raise ShapeError("mse", f"prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def back(g):
        gp = g * 2.0 * diff / n
        return gp, -gp
    return make_node("mse", np.asarray((diff * diff).sum() / n), (pred, target), back)


def flatten(x):
    return reshape(x, (x.shape[0], -1))


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)
