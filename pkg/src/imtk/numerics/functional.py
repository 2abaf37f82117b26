"""Differentiable ops on Tensors: activations, reductions with structure,
fused normalization/softmax, im2col convolution, resampling and attention
primitives. Everything here has a hand-written backward rule; the gradient
suite in `gradcheck` holds each one against central finite differences.
"""

import numpy as np

from .tensor import Tensor, ShapeError, as_tensor

__all__ = [
    "exp", "log", "safe_sqrt", "absolute", "tanh", "sigmoid",
    "relu", "leaky_relu", "silu",
    "concat", "roll", "take", "pad2d",
    "softmax_rows", "layer_norm", "linear",
    "im2col", "conv2d", "upsample_nearest2d", "avg_pool_all",
    "pixel_shuffle", "pixel_unshuffle",
    "scaled_dot_attention", "topk_row_mask",
]


# -- pointwise ---------------------------------------------------------------

def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    return Tensor._make(y, (x,), lambda g: (g * y,))


def log(x):
    x = as_tensor(x)
    d = x.data
    return Tensor._make(np.log(d), (x,), lambda g: (g / d,))


def safe_sqrt(x):
    """sqrt with subgradient 0 at 0, so sums of squares can hit zero exactly."""
    x = as_tensor(x)
    y = np.sqrt(x.data)

    def bwd(g):
        denom = 2.0 * y
        return (np.where(y > 0, g / np.where(denom > 0, denom, 1.0), 0.0),)

    return Tensor._make(y, (x,), bwd)


def absolute(x):
    """|x| with subgradient 0 at 0."""
    x = as_tensor(x)
    d = x.data
    return Tensor._make(np.abs(d), (x,), lambda g: (g * np.sign(d),))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return Tensor._make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    y = y.astype(d.dtype)
    return Tensor._make(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x):
    x = as_tensor(x)
    d = x.data
    return Tensor._make(np.maximum(d, 0), (x,), lambda g: (g * (d > 0),))


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    d = x.data
    scale = np.where(d > 0, 1.0, slope).astype(d.dtype)
    return Tensor._make(d * scale, (x,), lambda g: (g * scale,))


def silu(x):
    x = as_tensor(x)
    d = x.data
    s = 1.0 / (1.0 + np.exp(-d))

    def bwd(g):
        return (g * s * (1.0 + d * (1.0 - s)),)

    return Tensor._make(d * s, (x,), bwd)


# -- structure ---------------------------------------------------------------

def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out, tuple(tensors), bwd)


def roll(x, shift, axis):
    x = as_tensor(x)
    out = np.roll(x.data, shift, axis=axis)
    if isinstance(shift, tuple):
        neg = tuple(-s for s in shift)
    else:
        neg = -shift

    def bwd(g):
        return (np.roll(g, neg, axis=axis),)

    return Tensor._make(out, (x,), bwd)


def take(x, indices, axis):
    """Gather along one axis with a constant integer index array."""
    x = as_tensor(x)
    idx = np.asarray(indices)
    out = np.take(x.data, idx, axis=axis)
    src = x.data

    def bwd(g):
        dx = np.zeros_like(src)
        sl = [slice(None)] * src.ndim
        sl[axis % src.ndim] = idx
        np.add.at(dx, tuple(sl), g)
        return (dx,)

    return Tensor._make(out, (x,), bwd)


def pad2d(x, pad):
    """Zero-pad the trailing two axes of a [B, C, H, W] tensor."""
    x = as_tensor(x)
    if pad == 0:
        return x
    widths = ((0, 0),) * (x.data.ndim - 2) + ((pad, pad), (pad, pad))
    out = np.pad(x.data, widths)

    def bwd(g):
        return (g[..., pad:-pad, pad:-pad],)

    return Tensor._make(out, (x,), bwd)


# -- fused normalization ops ---------------------------------------------------

def softmax_rows(x):
    """Softmax over the last axis, numerically stabilized, fused backward."""
    x = as_tensor(x)
    d = x.data
    z = d - d.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return Tensor._make(y, (x,), bwd)


def layer_norm(x, gamma=None, beta=None, eps=1e-5):
    """Normalize over the last axis; optional affine scale and shift."""
    x = as_tensor(x)
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def dx_from(dxhat):
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - m1 - xhat * m2)

    if gamma is None:
        return Tensor._make(xhat, (x,), lambda g: (dx_from(g),))

    gamma, beta = as_tensor(gamma), as_tensor(beta)
    out = gamma.data * xhat + beta.data
    red = tuple(range(d.ndim - 1))

    def bwd(g):
        dx = dx_from(g * gamma.data)
        dgamma = (g * xhat).sum(axis=red) if red else g * xhat
        dbeta = g.sum(axis=red) if red else g
        return dx, dgamma.reshape(gamma.data.shape), dbeta.reshape(beta.data.shape)

    return Tensor._make(out, (x, gamma, beta), bwd)


def linear(x, w, b=None):
    """Affine map along the last axis. Weight is stored [Dout, Din]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.shape[-1] != w.data.shape[1]:
        raise ShapeError("linear: input dim %d != weight Din %d"
                         % (x.data.shape[-1], w.data.shape[1]))
    vector = x.data.ndim == 1
    if vector:
        x = x.reshape(1, -1)
    y = x @ w.transpose(1, 0)
    if b is not None:
        y = y + as_tensor(b)
    if vector:
        y = y.reshape(-1)
    return y


# -- convolution -----------------------------------------------------------------

def _im2col_fwd(x, kh, kw, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    b, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols, x_shape, kh, kw, stride, pad, oh, ow):
    b, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    dx = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    if pad:
        dx = dx[:, :, pad:hp - pad, pad:wp - pad]
    return dx


def im2col(x, kh, kw, stride=1, pad=0):
    """Unfold [B, C, H, W] into [B, C*kh*kw, OH*OW] patch columns.

    Returns (cols, oh, ow). Convolution is then a matmul against a
    [out_c, C*kh*kw] weight matrix, which keeps one backward rule per primitive.
    """
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("im2col expects [B, C, H, W], got %s" % (x.data.shape,))
    h, w = x.data.shape[2:]
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError("kernel %dx%d exceeds padded input %s" % (kh, kw, x.data.shape))
    cols, oh, ow = _im2col_fwd(x.data, kh, kw, stride, pad)
    shape = x.data.shape

    def bwd(g):
        return (_col2im(g, shape, kh, kw, stride, pad, oh, ow),)

    return Tensor._make(cols, (x,), bwd), oh, ow


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """Plain 2-D convolution (cross-correlation) via im2col + matmul."""
    x, weight = as_tensor(x), as_tensor(weight)
    out_c, in_c, kh, kw = weight.data.shape
    if x.data.shape[1] != in_c:
        raise ShapeError("conv2d channels: input %s vs weight %s"
                         % (x.data.shape, weight.data.shape))
    cols, oh, ow = im2col(x, kh, kw, stride=stride, pad=pad)
    wmat = weight.reshape(out_c, in_c * kh * kw)
    out = wmat @ cols  # [B, out_c, OH*OW]
    b = x.data.shape[0]
    out = out.reshape(b, out_c, oh, ow)
    if bias is not None:
        out = out + as_tensor(bias).reshape(1, out_c, 1, 1)
    return out


def upsample_nearest2d(x, factor):
    """Nearest-neighbor upsample of the trailing two axes by an integer factor."""
    x = as_tensor(x)
    s = int(factor)
    if s < 1:
        raise ShapeError("upsample factor must be >= 1")
    if s == 1:
        return x
    b, c, h, w = x.data.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (b, c, h, s, w, s))
    out = out.reshape(b, c, h * s, w * s)

    def bwd(g):
        return (g.reshape(b, c, h, s, w, s).sum(axis=(3, 5)),)

    return Tensor._make(np.ascontiguousarray(out), (x,), bwd)


def avg_pool_all(x):
    """Global average pool: [B, C, H, W] -> [B, C]."""
    return as_tensor(x).mean(axis=(2, 3))


def pixel_shuffle(x, r):
    """[B, C*r*r, H, W] -> [B, C, H*r, W*r], channel blocks becoming subpixels."""
    x = as_tensor(x)
    b, crr, h, w = x.data.shape
    if crr % (r * r):
        raise ShapeError("pixel_shuffle: %d channels not divisible by %d" % (crr, r * r))
    c = crr // (r * r)
    t = x.reshape(b, c, r, r, h, w)
    t = t.transpose(0, 1, 4, 2, 5, 3)  # [B, C, H, r, W, r]
    return t.reshape(b, c, h * r, w * r)


def pixel_unshuffle(x, r):
    x = as_tensor(x)
    b, c, hr, wr = x.data.shape
    if hr % r or wr % r:
        raise ShapeError("pixel_unshuffle: spatial dims %s not divisible by %d"
                         % ((hr, wr), r))
    h, w = hr // r, wr // r
    t = x.reshape(b, c, h, r, w, r)
    t = t.transpose(0, 1, 3, 5, 2, 4)  # [B, C, r, r, H, W]
    return t.reshape(b, c * r * r, h, w)


# -- attention ------------------------------------------------------------------

def scaled_dot_attention(q, k, v, extra_scores=None):
    """softmax(q k^T / sqrt(d) [+ extra_scores]) v over the last two axes.

    q [*, Nq, d], k [*, Nk, d], v [*, Nk, dv]. Returns (out, attn) with the
    row-stochastic attention map exposed for reuse and inspection.
    `extra_scores` is a constant additive bias (masking), not differentiated.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.data.shape[-1]
    if k.data.shape[-1] != d:
        raise ShapeError("attention q/k dims differ: %s vs %s" % (q.shape, k.shape))
    if k.data.shape[-2] != v.data.shape[-2]:
        raise ShapeError("attention k/v lengths differ: %s vs %s" % (k.shape, v.shape))
    kt = k.transpose(*range(k.data.ndim - 2), k.data.ndim - 1, k.data.ndim - 2)
    scores = (q @ kt) * (1.0 / np.sqrt(d))
    if extra_scores is not None:
        scores = scores + Tensor(np.asarray(extra_scores, dtype=scores.data.dtype))
    attn = softmax_rows(scores)
    return attn @ v, attn


def topk_row_mask(a, k):
    """Keep the k largest entries of each row (last axis), zero the rest.

    Ties at the threshold keep the lowest column index, so exactly k entries
    survive per row. Accepts ndarray or Tensor; for a Tensor the selection is
    a constant and gradients flow only through the kept entries.
    """
    values = a.data if isinstance(a, Tensor) else np.asarray(a)
    keep = _topk_keep(values, k)
    if isinstance(a, Tensor):
        return a * Tensor(keep.astype(values.dtype))
    return np.where(keep, values, values.dtype.type(0))


def _topk_keep(a, k):
    n = a.shape[-1]
    if not 1 <= k <= n:
        raise ValueError("topk_row_mask: k=%d out of range [1, %d]" % (k, n))
    if k == n:
        return np.ones(a.shape, dtype=bool)
    thr = np.partition(a, n - k, axis=-1)[..., n - k:n - k + 1]
    above = a > thr
    need = k - above.sum(axis=-1, keepdims=True)
    at = a == thr
    rank = np.cumsum(at, axis=-1)  # 1-based rank among tied entries
    return above | (at & (rank <= need))
