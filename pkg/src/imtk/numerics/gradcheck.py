"""Finite-difference verification of every backward rule.

Each case builds a scalar loss from small float64 inputs, runs the engine's
backward, then recomputes every input gradient by central differences and
reports the worst relative error. The case list is injectable so tests can
prove the checker catches a deliberately corrupted rule.
"""

import numpy as np

from .tensor import Tensor
from . import functional as F

__all__ = ["finite_diff_grad", "max_rel_err", "run_case", "grad_check_all",
           "DEFAULT_CASES"]


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar f at x. Mutates and restores x."""
    g = np.zeros_like(x)
    flat, gflat = x.ravel(), g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        fp = f(x)
        flat[i] = keep - eps
        fm = f(x)
        flat[i] = keep
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def max_rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    return float(np.abs(analytic - numeric).max(initial=0.0) / (scale + 1e-12))


def run_case(factory, rng, eps=1e-5):
    """Return the worst relative error across all inputs of one case."""
    build, arrays = factory(rng)
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    if loss.data.ndim != 0:
        raise ValueError("grad-check losses must be scalar, got %s" % (loss.shape,))
    loss.backward()

    worst = 0.0
    for i in range(len(arrays)):
        if tensors[i].grad is None:
            raise ValueError("input %d received no gradient" % i)

        def f(x):
            ts = [Tensor(a) for a in arrays]
            ts[i] = Tensor(x)
            return float(build(*ts).data)

        num = finite_diff_grad(f, arrays[i].copy(), eps=eps)
        worst = max(worst, max_rel_err(tensors[i].grad, num))
    return worst


def _w(rng, *shape):
    return rng.standard_normal(shape)


def _dot_loss(y, cst):
    return (y * Tensor(cst)).sum()


def _case_add_broadcast(rng):
    a, b, c = _w(rng, 3, 4), _w(rng, 4), _w(rng, 3, 4)
    return (lambda ta, tb: _dot_loss(ta + tb, c)), [a, b]


def _case_mul_broadcast(rng):
    a, b, c = _w(rng, 2, 3, 1), _w(rng, 3, 4), _w(rng, 2, 3, 4)
    return (lambda ta, tb: _dot_loss(ta * tb, c)), [a, b]


def _case_scalar_mix(rng):
    a = _w(rng, 3, 3)
    b = _w(rng, 3, 3)
    c = _w(rng, 3, 3)

    def build(ta, tb):
        y = (2.0 - ta) / (tb * tb + 1.5) + ta / 2.0 - 3.0 * ta + 1.0 / (ta * ta + 1.0)
        return _dot_loss(y, c)

    return build, [a, b]


def _case_div(rng):
    a, b, c = _w(rng, 3, 4), _w(rng, 3, 4), _w(rng, 3, 4)
    return (lambda ta, tb: _dot_loss(ta / (tb * tb + 0.7), c)), [a, b]


def _case_pow(rng):
    a, c = _w(rng, 4, 3), _w(rng, 4, 3)
    return (lambda ta: _dot_loss((ta * ta + 1.0) ** 1.5 + (ta * ta + 0.5) ** -0.5, c)), [a]


def _case_exp_log(rng):
    a, c = _w(rng, 3, 3), _w(rng, 3, 3)
    return (lambda ta: _dot_loss(F.exp(ta * 0.5) + F.log(ta * ta + 0.5), c)), [a]


def _case_sqrt_abs(rng):
    a = _w(rng, 4, 4)
    a = a + 0.3 * np.sign(a)  # keep away from the |.| kink
    c = _w(rng, 4, 4)
    return (lambda ta: _dot_loss(F.safe_sqrt(ta * ta + 0.2) + F.absolute(ta), c)), [a]


def _case_tanh_sigmoid(rng):
    a, c = _w(rng, 2, 5), _w(rng, 2, 5)
    return (lambda ta: _dot_loss(F.tanh(ta) + F.sigmoid(2.0 * ta), c)), [a]


def _case_relu_family(rng):
    a = _w(rng, 4, 4)
    a = a + 0.3 * np.sign(a)  # keep away from the kink at 0
    c = _w(rng, 4, 4)
    return (lambda ta: _dot_loss(F.relu(ta) + F.leaky_relu(ta, 0.2) + F.silu(ta), c)), [a]


def _case_reductions(rng):
    a = _w(rng, 3, 4, 2)
    c1, c2, c3 = _w(rng, 3, 2), _w(rng, 1, 4, 1), _w(rng)

    def build(ta):
        return (_dot_loss(ta.sum(axis=1), c1)
                + _dot_loss(ta.mean(axis=(0, 2), keepdims=True), c2)
                + ta.mean() * Tensor(c3))

    return build, [a]


def _case_matmul2d(rng):
    a, b, c = _w(rng, 3, 4), _w(rng, 4, 2), _w(rng, 3, 2)
    return (lambda ta, tb: _dot_loss(ta @ tb, c)), [a, b]


def _case_matmul_batched(rng):
    a, b, c = _w(rng, 2, 3, 4), _w(rng, 4, 5), _w(rng, 2, 3, 5)
    return (lambda ta, tb: _dot_loss(ta @ tb, c)), [a, b]


def _case_matmul_bcast_left(rng):
    a, b, c = _w(rng, 3, 4), _w(rng, 2, 4, 5), _w(rng, 2, 3, 5)
    return (lambda ta, tb: _dot_loss(ta @ tb, c)), [a, b]


def _case_linear(rng):
    x, w, b = _w(rng, 2, 3, 4), _w(rng, 5, 4), _w(rng, 5)
    c = _w(rng, 2, 3, 5)
    return (lambda tx, tw, tb: _dot_loss(F.linear(tx, tw, tb), c)), [x, w, b]


def _case_layer_norm_plain(rng):
    x, c = _w(rng, 3, 6), _w(rng, 3, 6)
    return (lambda tx: _dot_loss(F.layer_norm(tx), c)), [x]


def _case_shape_chain(rng):
    a, c = _w(rng, 2, 3, 4), _w(rng, 4, 6)
    return (lambda ta: _dot_loss(ta.transpose(2, 0, 1).reshape(4, 6), c)), [a]


def _case_getitem(rng):
    a = _w(rng, 4, 5)
    c1, c2 = _w(rng, 3, 3), _w(rng, 4)
    idx = np.array([0, 2, 2, 3])  # duplicate index exercises scatter-add

    def build(ta):
        return _dot_loss(ta[1:, ::2], c1) + _dot_loss(ta[idx, 1], c2)

    return build, [a]


def _case_take(rng):
    a, c = _w(rng, 2, 4, 3), _w(rng, 2, 6, 3)
    idx = np.array([0, 0, 1, 3, 3, 2])
    return (lambda ta: _dot_loss(F.take(ta, idx, axis=1), c)), [a]


def _case_concat_roll(rng):
    a, b = _w(rng, 2, 3), _w(rng, 2, 2)
    c = _w(rng, 2, 5)

    def build(ta, tb):
        y = F.concat([ta, tb], axis=1)
        return _dot_loss(F.roll(y, (1, -2), axis=(0, 1)), c)

    return build, [a, b]


def _case_pad(rng):
    a, c = _w(rng, 1, 2, 3, 3), _w(rng, 1, 2, 5, 5)
    return (lambda ta: _dot_loss(F.pad2d(ta, 1), c)), [a]


def _case_softmax(rng):
    a, c = _w(rng, 3, 5), _w(rng, 3, 5)
    return (lambda ta: _dot_loss(F.softmax_rows(ta * 2.0), c)), [a]


def _case_layer_norm(rng):
    x, g, b = _w(rng, 2, 5), _w(rng, 5) + 1.0, _w(rng, 5)
    c = _w(rng, 2, 5)
    return (lambda tx, tg, tb: _dot_loss(F.layer_norm(tx, tg, tb), c)), [x, g, b]


def _case_im2col(rng):
    x = _w(rng, 1, 2, 5, 5)
    c = _w(rng, 1, 18, 9)

    def build(tx):
        cols, _, _ = F.im2col(tx, 3, 3, stride=2, pad=1)
        return _dot_loss(cols, c)

    return build, [x]


def _case_conv_s1(rng):
    x, w, b = _w(rng, 2, 3, 5, 5), _w(rng, 4, 3, 3, 3) * 0.4, _w(rng, 4)
    c = _w(rng, 2, 4, 5, 5)
    return (lambda tx, tw, tb: _dot_loss(F.conv2d(tx, tw, tb, stride=1, pad=1), c)), [x, w, b]


def _case_conv_s2(rng):
    x, w = _w(rng, 1, 3, 6, 6), _w(rng, 2, 3, 3, 3) * 0.4
    c = _w(rng, 1, 2, 3, 3)
    return (lambda tx, tw: _dot_loss(F.conv2d(tx, tw, None, stride=2, pad=1), c)), [x, w]


def _case_upsample(rng):
    x, c = _w(rng, 1, 2, 3, 3), _w(rng, 1, 2, 6, 6)
    return (lambda tx: _dot_loss(F.upsample_nearest2d(tx, 2), c)), [x]


def _case_pixel_shuffle(rng):
    x, c = _w(rng, 1, 8, 2, 2), _w(rng, 1, 8, 2, 2)

    def build(tx):
        y = F.pixel_shuffle(tx, 2)
        return _dot_loss(F.pixel_unshuffle(y, 2), c)

    return build, [x]


def _case_attention(rng):
    q, k, v = _w(rng, 2, 4, 3), _w(rng, 2, 5, 3), _w(rng, 2, 5, 6)
    c = _w(rng, 2, 4, 6)

    def build(tq, tk, tv):
        out, _ = F.scaled_dot_attention(tq, tk, tv)
        return _dot_loss(out, c)

    return build, [q, k, v]


def _case_attention_masked(rng):
    q, k, v = _w(rng, 2, 4, 3), _w(rng, 2, 4, 3), _w(rng, 2, 4, 6)
    c = _w(rng, 2, 4, 6)
    mask = np.where(rng.random((1, 4, 4)) < 0.3, -1e9, 0.0)
    mask[..., 0] = 0.0  # no fully masked rows

    def build(tq, tk, tv):
        out, _ = F.scaled_dot_attention(tq, tk, tv, extra_scores=mask)
        return _dot_loss(out, c)

    return build, [q, k, v]


def _case_modulated_conv(rng):
    x = _w(rng, 2, 3, 4, 4)
    w = _w(rng, 4, 3, 3, 3) * 0.5
    s = _w(rng, 2, 3) * 0.3
    c = _w(rng, 2, 4, 4, 4)

    def build(tx, tw, ts):
        style = ts + 1.0
        w1 = tw.reshape(1, 4, 3, 3, 3) * style.reshape(2, 1, 3, 1, 1)
        demod = ((w1 * w1).sum(axis=(2, 3, 4)) + 1e-8) ** -0.5
        w2 = w1 * demod.reshape(2, 4, 1, 1, 1)
        cols, _, _ = F.im2col(tx, 3, 3, stride=1, pad=1)
        out = w2.reshape(2, 4, 27) @ cols
        return _dot_loss(out.reshape(2, 4, 4, 4), c)

    return build, [x, w, s]


def _case_cast(rng):
    a, c = _w(rng, 3, 3), _w(rng, 3, 3)
    return (lambda ta: _dot_loss(ta.cast(np.float64), c)), [a]


DEFAULT_CASES = [
    ("add_broadcast", _case_add_broadcast),
    ("mul_broadcast", _case_mul_broadcast),
    ("scalar_mix", _case_scalar_mix),
    ("div", _case_div),
    ("pow", _case_pow),
    ("exp_log", _case_exp_log),
    ("sqrt_abs", _case_sqrt_abs),
    ("tanh_sigmoid", _case_tanh_sigmoid),
    ("relu_family", _case_relu_family),
    ("reductions", _case_reductions),
    ("matmul_2d", _case_matmul2d),
    ("matmul_batched", _case_matmul_batched),
    ("matmul_bcast_left", _case_matmul_bcast_left),
    ("linear", _case_linear),
    ("layer_norm_plain", _case_layer_norm_plain),
    ("shape_chain", _case_shape_chain),
    ("getitem", _case_getitem),
    ("take", _case_take),
    ("concat_roll", _case_concat_roll),
    ("pad2d", _case_pad),
    ("softmax_rows", _case_softmax),
    ("layer_norm", _case_layer_norm),
    ("im2col", _case_im2col),
    ("conv2d_s1", _case_conv_s1),
    ("conv2d_s2", _case_conv_s2),
    ("upsample_nearest", _case_upsample),
    ("pixel_shuffle", _case_pixel_shuffle),
    ("attention", _case_attention),
    ("attention_masked", _case_attention_masked),
    ("modulated_conv", _case_modulated_conv),
    ("cast", _case_cast),
]


def grad_check_all(seed=0, eps=1e-5, tol=1e-4, cases=None):
    """Run every case; returns [{name, rel_err, ok}]. All inputs are float64."""
    cases = DEFAULT_CASES if cases is None else cases
    results = []
    for name, factory in cases:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        err = run_case(factory, rng, eps=eps)
        results.append({"name": name, "rel_err": err, "ok": bool(err < tol)})
    return results
