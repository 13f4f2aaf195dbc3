"""Differentiable kernels: convolutions, pooling, pointwise ops, losses.

Feature maps are N x C x h x w, row-major.  Every kernel works in the dtype
of its inputs, so the same code serves float32 training and float64
gradient checks.
"""
import numpy as np

from ..errors import InvalidGrid, ShapeMismatch
from .core import Tensor, make_result


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}")


def _conv_out(size, k, stride, pad, dilation):
    return (size + 2 * pad - dilation * (k - 1) - 1) // stride + 1


# ---------------------------------------------------------------- convolution

def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1):
    """Zero-padded cross-correlation; weight is Cout x Cin x k x k."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeMismatch("conv2d expects 4-d input and weight")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeMismatch(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeMismatch(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ShapeMismatch("conv2d: stride and dilation must be >= 1, padding >= 0")
    oh = _conv_out(h, kh, stride, padding, dilation)
    ow = _conv_out(w, kw, stride, padding, dilation)
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"conv2d: non-positive output size {oh}x{ow}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    wd = weight.data
    # columns: N x Cin x kh x kw x oh x ow
    cols = np.empty((n, cin, kh, kw, oh, ow), dtype=x.data.dtype)
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            cols[:, :, i, j] = xp[:, :, r0:r0 + stride * (oh - 1) + 1:stride,
                                  c0:c0 + stride * (ow - 1) + 1:stride]
    flat = cols.reshape(n, cin * kh * kw, oh * ow)
    wmat = wd.reshape(cout, cin * kh * kw)
    out = np.matmul(wmat, flat).reshape(n, cout, oh, ow)
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1)

    def backward_fn(g):
        g2 = g.reshape(n, cout, oh * ow)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g2, flat, axes=([0, 2], [0, 2])).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2).reshape(n, cin, kh, kw, oh, ow)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                r0 = i * dilation
                for j in range(kw):
                    c0 = j * dilation
                    gxp[:, :, r0:r0 + stride * (oh - 1) + 1:stride,
                        c0:c0 + stride * (ow - 1) + 1:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_result(out, parents, backward_fn, "conv2d")


def transposed_conv2d(x, weight, bias=None, stride=1, padding=0):
    """Scatter-accumulate (gradient-of-conv) upsampling; weight is Cin x Cout x k x k."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeMismatch("transposed_conv2d expects 4-d input and weight")
    n, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeMismatch(f"transposed_conv2d: input has {cin} channels, weight expects {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeMismatch(f"transposed_conv2d: bias shape {bias.shape} != ({cout},)")
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (w - 1) * stride - 2 * padding + kw
    if oh < 1 or ow < 1 or stride < 1:
        raise ShapeMismatch(f"transposed_conv2d: non-positive output size {oh}x{ow}")
    fh, fw = (h - 1) * stride + kh, (w - 1) * stride + kw

    wd = weight.data
    wmat = wd.reshape(cin, cout * kh * kw)
    xf = x.data.reshape(n, cin, h * w)
    # per-position contributions: N x Cout x kh x kw x h x w
    contrib = np.matmul(wmat.T, xf).reshape(n, cout, kh, kw, h, w)
    full = np.zeros((n, cout, fh, fw), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + stride * (h - 1) + 1:stride,
                 j:j + stride * (w - 1) + 1:stride] += contrib[:, :, i, j]
    out = full[:, :, padding:padding + oh, padding:padding + ow]
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    else:
        out = np.ascontiguousarray(out)

    def backward_fn(g):
        gfull = np.zeros((n, cout, fh, fw), dtype=g.dtype)
        gfull[:, :, padding:padding + oh, padding:padding + ow] = g
        gcontrib = np.empty((n, cout, kh, kw, h, w), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gcontrib[:, :, i, j] = gfull[:, :, i:i + stride * (h - 1) + 1:stride,
                                             j:j + stride * (w - 1) + 1:stride]
        gc = gcontrib.reshape(n, cout * kh * kw, h * w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.matmul(wmat, gc).reshape(x.shape)
        if weight.requires_grad:
            gw = np.tensordot(xf, gc, axes=([0, 2], [0, 2])).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_result(out, parents, backward_fn, "transposed_conv2d")


# -------------------------------------------------------------------- pooling

def maxpool2d(x, k=2, stride=2):
    """Non-overlapping max pool; ties route the gradient to the first window element."""
    if k != stride:
        raise ShapeMismatch("maxpool2d supports only k == stride")
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeMismatch(f"maxpool2d: {h}x{w} not divisible by {k}")
    oh, ow = h // k, w // k
    win = x.data.reshape(n, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        gwin = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return make_result(out, (x,), backward_fn, "maxpool2d")


def region_bounds(size, parts):
    return [(j * size // parts, (j + 1) * size // parts) for j in range(parts)]


def region_maxpool(x, gy, gx):
    """Max over a gy x gx partition of the plane with floor(j*h/gy) boundaries."""
    n, c, h, w = x.shape
    if gy < 1 or gx < 1 or gy > h or gx > w:
        raise InvalidGrid(f"cannot split {h}x{w} into {gy}x{gx} regions")
    rows, cols = region_bounds(h, gy), region_bounds(w, gx)
    out = np.empty((n, c, gy, gx), dtype=x.data.dtype)
    picks = []
    for a, (r0, r1) in enumerate(rows):
        for b, (c0, c1) in enumerate(cols):
            sub = x.data[:, :, r0:r1, c0:c1].reshape(n, c, -1)
            idx = sub.argmax(axis=-1)
            out[:, :, a, b] = np.take_along_axis(sub, idx[..., None], axis=-1)[..., 0]
            picks.append((a, b, r0, r1, c0, c1, idx))

    def backward_fn(g):
        gxd = np.zeros(x.shape, dtype=g.dtype)
        for a, b, r0, r1, c0, c1, idx in picks:
            sub = np.zeros((n, c, (r1 - r0) * (c1 - c0)), dtype=g.dtype)
            np.put_along_axis(sub, idx[..., None], g[:, :, a, b][..., None], axis=-1)
            gxd[:, :, r0:r1, c0:c1] += sub.reshape(n, c, r1 - r0, c1 - c0)
        return (gxd,)

    return make_result(out, (x,), backward_fn, "region_maxpool")


# ------------------------------------------------------------------ pointwise

def relu(x):
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.data.dtype)
    return make_result(out, (x,), lambda g: (g * mask,), "relu")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    s = _sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def add(a, b):
    _same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a, b):
    _same_shape(a, b, "mul")
    return make_result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def add_scalar(x, s):
    out = x.data + x.data.dtype.type(s)
    return make_result(out, (x,), lambda g: (g,), "add_scalar")


def mul_scalar(x, s):
    s = x.data.dtype.type(s)
    return make_result(x.data * s, (x,), lambda g: (g * s,), "mul_scalar")


def tensor_sum(x):
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)
    return make_result(out, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.data.dtype),), "sum")


def tensor_mean(x):
    n = x.size
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)
    return make_result(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),), "mean")


def weighted_sum(x, weights):
    """Scalar sum(x * weights) for a constant weight array.

    The reduction is accumulated and returned in at least float64 so finite
    differences on float32 graphs are not swamped by summation rounding.
    """
    w = np.asarray(weights, dtype=x.data.dtype)
    _same_shape(x, w, "weighted_sum")
    acc = np.promote_types(np.float64, x.data.dtype)
    out = np.asarray(np.sum(x.data.astype(acc) * w), dtype=acc)
    return make_result(out, (x,), lambda g: ((g * w).astype(x.data.dtype),), "weighted_sum")


# ----------------------------------------------------------- shape plumbing

def concat_channels(xs):
    xs = list(xs)
    if not xs:
        raise ShapeMismatch("concat_channels needs at least one input")
    ref = xs[0].shape
    for t in xs:
        if t.data.ndim != len(ref) or len(ref) < 2 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeMismatch(f"concat_channels: {t.shape} incompatible with {ref}")
    if len(xs) == 1:
        return xs[0]
    out = np.concatenate([t.data for t in xs], axis=1)
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=1))

    return make_result(out, tuple(xs), backward_fn, "concat_channels")


def split_channels(x, sizes):
    """Inverse of concat_channels: cut the channel axis into consecutive pieces."""
    if sum(sizes) != x.shape[1]:
        raise ShapeMismatch(f"split sizes {sizes} do not sum to {x.shape[1]}")
    parts, start = [], 0
    for s in sizes:
        lo, hi = start, start + s

        def backward_fn(g, lo=lo, hi=hi):
            gx = np.zeros(x.shape, dtype=g.dtype)
            gx[:, lo:hi] = g
            return (gx,)

        parts.append(make_result(np.ascontiguousarray(x.data[:, lo:hi]), (x,), backward_fn, "split"))
        start = hi
    return parts


def flatten(x):
    n = x.shape[0]
    return make_result(x.data.reshape(n, -1), (x,), lambda g: (g.reshape(x.shape),), "flatten")


def fully_connected(x, weight, bias=None):
    """y = x @ weight.T + bias for x: N x din, weight: dout x din."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"fully_connected: input {x.shape}, weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeMismatch(f"fully_connected: bias {bias.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward_fn(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_result(out, parents, backward_fn, "fully_connected")


def broadcast_spatial(v, h, w):
    """Copy an N x c vector to every position of an N x c x h x w map."""
    if v.data.ndim != 2:
        raise ShapeMismatch(f"broadcast_spatial expects N x c, got {v.shape}")
    n, c = v.shape
    out = np.ascontiguousarray(np.broadcast_to(v.data[:, :, None, None], (n, c, h, w)))
    return make_result(out, (v,), lambda g: (g.sum(axis=(2, 3)),), "broadcast_spatial")


def channel_standardize(x, eps=1e-5):
    """Per sample and channel: subtract the spatial mean, divide by sqrt(var + eps)."""
    if x.data.ndim != 4:
        raise ShapeMismatch(f"channel_standardize expects N x c x h x w, got {x.shape}")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    d = x.data - mu
    inv = 1 / np.sqrt((d * d).mean(axis=(2, 3), keepdims=True) + x.data.dtype.type(eps))
    y = d * inv

    def backward_fn(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gy = (g * y).mean(axis=(2, 3), keepdims=True)
        return ((g - gm - y * gy) * inv,)

    return make_result(y, (x,), backward_fn, "channel_standardize")


# --------------------------------------------------------------------- losses

BCE_EPS = 1e-7


def bce_loss(pred, target):
    """Mean binary cross-entropy with predictions clamped to [eps, 1 - eps]."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != t.shape:
        raise ShapeMismatch(f"bce_loss: {pred.shape} vs {t.shape}")
    dt = pred.data.dtype
    t = t.astype(dt)
    p = np.clip(pred.data, BCE_EPS, 1 - BCE_EPS)
    n = p.size
    loss = -(t * np.log(p) + (1 - t) * np.log(1 - p)).mean()
    inside = (pred.data >= BCE_EPS) & (pred.data <= 1 - BCE_EPS)

    def backward_fn(g):
        gp = (-t / p + (1 - t) / (1 - p)) / n
        return (g * gp * inside,)

    return make_result(np.asarray(loss, dtype=dt), (pred,), backward_fn, "bce_loss")
