"""Numerics layer: op semantics against closed forms and brute-force oracles,
plus finite-difference verification of every backward rule.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imtk.numerics import (Tensor, ShapeError, Adam, Parameter, no_grad,
                           set_check_finite)
from imtk.numerics import functional as F
from imtk.numerics import gradcheck


# -- convolution ---------------------------------------------------------------

def test_conv2d_all_ones_overlap_counts():
    x = Tensor(np.ones((1, 1, 3, 3), np.float32))
    w = Tensor(np.ones((1, 1, 3, 3), np.float32))
    b = Tensor(np.zeros(1, np.float32))
    y = F.conv2d(x, w, b, stride=1, pad=1).data[0, 0]
    expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], np.float32)
    assert np.array_equal(y, expected)


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 3, 5, 5)).astype(np.float32))
    w = np.zeros((3, 3, 3, 3), np.float32)
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    y = F.conv2d(x, Tensor(w), None, stride=1, pad=1)
    assert np.array_equal(y.data, x.data)


def test_conv2d_output_shape_and_errors():
    x = Tensor(np.zeros((1, 3, 9, 9), np.float32))
    w = Tensor(np.zeros((4, 3, 3, 3), np.float32))
    y = F.conv2d(x, w, None, stride=2, pad=1)
    assert y.shape == (1, 4, 5, 5)  # floor((9+2-3)/2)+1
    bad = Tensor(np.zeros((4, 2, 3, 3), np.float32))
    with pytest.raises(ShapeError):
        F.conv2d(x, bad, None)


def test_im2col_matches_explicit_patches():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 6, 7))
    cols, oh, ow = F.im2col(Tensor(x), 3, 3, stride=2, pad=1)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for b in range(2):
        for i in range(oh):
            for j in range(ow):
                patch = xp[b, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3].reshape(-1)
                assert np.allclose(cols.data[b, :, i * ow + j], patch)


# -- linear / norms ---------------------------------------------------------------

def test_linear_examples():
    y = F.linear(Tensor([1.0, 2.0]), Tensor([[1.0, 1.0]]), Tensor([1.0]))
    assert np.allclose(y.data, [4.0])
    x = np.random.default_rng(2).standard_normal((3, 4)).astype(np.float32)
    y = F.linear(Tensor(x), Tensor(np.eye(4, dtype=np.float32)), None)
    assert np.allclose(y.data, x)


def test_layer_norm_closed_forms():
    y = F.layer_norm(Tensor([5.0, 5.0, 5.0]))
    assert np.allclose(y.data, 0.0)
    y = F.layer_norm(Tensor([-1.0, 1.0]))
    assert np.allclose(y.data, [-1.0, 1.0], atol=1e-4)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 7))
    y = F.layer_norm(Tensor(x)).data
    assert np.allclose(y.mean(-1), 0.0, atol=1e-6)
    assert np.allclose(y.std(-1), 1.0, atol=1e-4)


def test_softmax_examples():
    assert np.allclose(F.softmax_rows(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    y = F.softmax_rows(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(y)) and y[0] > 0.999999


def test_softmax_matches_bruteforce_f64():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 9)) * 5
    y = F.softmax_rows(Tensor(x)).data
    for i in range(6):
        e = np.exp(x[i])
        assert np.abs(y[i] - e / e.sum()).max() < 1e-6


@given(st.lists(st.floats(min_value=-1e4, max_value=1e4, allow_nan=False),
                min_size=2, max_size=8))
@settings(max_examples=60, deadline=None)
def test_softmax_rows_sum_to_one(row):
    y = F.softmax_rows(Tensor(np.array(row, np.float64))).data
    assert abs(y.sum() - 1.0) < 1e-6 and np.all(y >= 0)


# -- attention ---------------------------------------------------------------------

def _attention_oracle(q, k, v):
    n, d = q.shape
    m = k.shape[0]
    a = np.zeros((n, m))
    for i in range(n):
        row = np.array([q[i] @ k[j] for j in range(m)]) / np.sqrt(d)
        e = np.exp(row - row.max())
        a[i] = e / e.sum()
    return a @ v, a


def test_attention_single_key():
    q = Tensor(np.array([[1.0, 2.0]]))
    v = Tensor(np.array([[3.0, 4.0, 5.0]]))
    out, a = F.scaled_dot_attention(q, q, v)
    assert np.allclose(a.data, [[1.0]])
    assert np.allclose(out.data, v.data)


def test_attention_identity_values():
    rng = np.random.default_rng(5)
    q = Tensor(rng.standard_normal((4, 3)))
    k = Tensor(rng.standard_normal((5, 3)))
    v = Tensor(np.eye(5))
    out, a = F.scaled_dot_attention(q, k, v)
    assert np.allclose(out.data, a.data, atol=1e-12)


def test_attention_matches_loop_oracle():
    rng = np.random.default_rng(6)
    for _ in range(10):
        n, m, d, c = rng.integers(1, 9, size=4)
        q = rng.standard_normal((n, d))
        k = rng.standard_normal((m, d))
        v = rng.standard_normal((m, c))
        out, a = F.scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v))
        oo, oa = _attention_oracle(q, k, v)
        assert np.abs(out.data - oo).max() < 1e-6
        assert np.abs(a.data - oa).max() < 1e-6


# -- top-k masking ------------------------------------------------------------------

def test_topk_examples():
    row = np.array([[0.1, 0.5, 0.4]])
    assert np.array_equal(F.topk_row_mask(row, 3), row)
    assert np.array_equal(F.topk_row_mask(row, 2), [[0.0, 0.5, 0.4]])
    tie = np.array([[0.3, 0.3, 0.3]])
    assert np.array_equal(F.topk_row_mask(tie, 1), [[0.3, 0.0, 0.0]])
    with pytest.raises(ValueError):
        F.topk_row_mask(row, 0)
    with pytest.raises(ValueError):
        F.topk_row_mask(row, 4)


@given(st.integers(1, 8), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_topk_exact_count_and_idempotent(k, seed):
    rng = np.random.default_rng(seed)
    a = F.softmax_rows(Tensor(rng.standard_normal((5, 8)) * 3)).data
    k = min(k, 8)
    m = F.topk_row_mask(a, k)
    assert np.all((m > 0).sum(-1) == k)
    assert np.array_equal(F.topk_row_mask(m, k), m)


def test_topk_tensor_grad_flows_only_through_kept():
    a = Tensor(np.array([[0.1, 0.5, 0.4]]), requires_grad=True)
    F.topk_row_mask(a, 2).sum().backward()
    assert np.array_equal(a.grad, [[0.0, 1.0, 1.0]])


# -- resampling ----------------------------------------------------------------------

def test_upsample_nearest_examples():
    x = Tensor(np.full((1, 1, 1, 1), 7.0, np.float32))
    assert np.array_equal(F.upsample_nearest2d(x, 2).data, np.full((1, 1, 2, 2), 7.0))
    rng = np.random.default_rng(7)
    a = rng.standard_normal((2, 3, 4, 5)).astype(np.float32)
    t = Tensor(a)
    assert F.upsample_nearest2d(t, 1) is t
    up = F.upsample_nearest2d(t, 3).data
    assert np.array_equal(up[:, :, ::3, ::3], a)


def test_pixel_shuffle_definition_and_roundtrip():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0], np.float32).reshape(1, 4, 1, 1))
    y = F.pixel_shuffle(x, 2)
    assert np.array_equal(y.data[0, 0], [[1, 2], [3, 4]])
    rng = np.random.default_rng(8)
    a = rng.standard_normal((2, 8, 3, 3)).astype(np.float32)
    back = F.pixel_unshuffle(F.pixel_shuffle(Tensor(a), 2), 2)
    assert np.array_equal(back.data, a)
    with pytest.raises(ShapeError):
        F.pixel_shuffle(Tensor(np.zeros((1, 3, 2, 2))), 2)


# -- activations -----------------------------------------------------------------------

def test_activation_point_values():
    assert F.silu(Tensor([0.0])).data[0] == 0.0
    assert np.isclose(F.leaky_relu(Tensor([-1.0]), 0.2).data[0], -0.2)
    assert F.relu(Tensor([-3.0])).data[0] == 0.0
    assert np.isclose(F.sigmoid(Tensor([0.0])).data[0], 0.5)


def test_safe_sqrt_subgradient_zero_at_zero():
    x = Tensor(np.array([0.0, 4.0]), requires_grad=True)
    F.safe_sqrt(x).sum().backward()
    assert np.allclose(x.grad, [0.0, 0.25])
    y = Tensor(np.array([0.0, -2.0]), requires_grad=True)
    F.absolute(y).sum().backward()
    assert np.allclose(y.grad, [0.0, -1.0])


# -- optimizer ------------------------------------------------------------------------

def test_adam_zero_grad_keeps_param():
    p = Parameter(np.array([1.5], np.float32))
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros(1, np.float32)
    opt.step()
    assert np.array_equal(p.data, [1.5])


def test_adam_first_step_moves_by_lr_sign():
    p = Parameter(np.array([2.0], np.float32))
    opt = Adam([p], lr=0.1, beta1=0.5, beta2=0.99)
    p.grad = np.ones(1, np.float32)
    opt.step()
    assert abs((2.0 - p.data[0]) - 0.1) < 1e-6


def test_adam_none_grad_skipped():
    p = Parameter(np.array([1.0], np.float32))
    opt = Adam([p], lr=0.1)
    opt.step()
    assert np.array_equal(p.data, [1.0]) and opt.t == 1


# -- the finite-difference oracle itself ---------------------------------------------

def test_finite_diff_grad_closed_forms():
    g = gradcheck.finite_diff_grad(lambda x: float(x.sum()), np.zeros(4))
    assert np.allclose(g, 1.0, atol=1e-9)
    g = gradcheck.finite_diff_grad(lambda x: float((x * x).sum()), np.array([3.0]))
    assert abs(g[0] - 6.0) < 1e-8


def test_grad_suite_passes_across_seeds():
    for seed in (0, 1, 2):
        for r in gradcheck.grad_check_all(seed=seed):
            assert r["ok"], "%s rel err %.3e at seed %d" % (r["name"], r["rel_err"], seed)


def test_grad_suite_catches_corrupted_backward():
    def bad_mul_case(rng):
        a = rng.standard_normal((3, 3))
        b = rng.standard_normal((3, 3))

        def build(ta, tb):
            out = ta.data * tb.data
            # deliberately wrong rule: both grads use the wrong operand
            bad = Tensor._make(out, (ta, tb), lambda g: (g * ta.data, g * tb.data))
            return bad.sum()

        return build, [a, b]

    res = gradcheck.grad_check_all(cases=[("bad_mul", bad_mul_case)])
    assert not res[0]["ok"] and res[0]["rel_err"] > 1e-2


# -- engine behavior --------------------------------------------------------------------

def test_broadcast_gradients_sum_correctly():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    ((a + b) * 2.0).sum().backward()
    assert np.array_equal(a.grad, np.full((3, 4), 2.0))
    assert np.array_equal(b.grad, np.full(4, 6.0))


def test_backward_accumulates_until_zero_grad():
    x = Tensor(np.array([1.0]), requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    assert np.allclose(x.grad, [6.0])
    x.zero_grad()
    assert x.grad is None


def test_reused_node_fans_in():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x * 3.0  # d/dx = 2x + 3 = 7
    y.sum().backward()
    assert np.allclose(x.grad, [7.0])


def test_no_grad_blocks_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._backward is None


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)) @ Tensor(np.ones((3, 2)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


def test_checked_mode_flags_nonfinite():
    set_check_finite(True)
    try:
        with np.errstate(all="ignore"):
            with pytest.raises(FloatingPointError):
                F.log(Tensor([-1.0]))
    finally:
        set_check_finite(False)


def test_roll_and_concat_match_numpy():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((3, 4)).astype(np.float32)
    b = rng.standard_normal((3, 2)).astype(np.float32)
    assert np.array_equal(F.roll(Tensor(a), (1, -1), (0, 1)).data, np.roll(a, (1, -1), (0, 1)))
    assert np.array_equal(F.concat([Tensor(a), Tensor(b)], axis=1).data,
                          np.concatenate([a, b], axis=1))


def test_ops_deterministic_bitwise():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    y1 = F.conv2d(Tensor(x), Tensor(w), None, stride=2, pad=1).data
    y2 = F.conv2d(Tensor(x.copy()), Tensor(w.copy()), None, stride=2, pad=1).data
    assert y1.tobytes() == y2.tobytes()
