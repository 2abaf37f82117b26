"""Guided sparse resampling vs the dense product it approximates.

A coarse attention map [N_c x N_c] gets applied to fine-resolution values by
upsampling the map along both token axes, keeping only the top-k entries per
row, and renormalizing. This script checks the k = N degenerate case is
bitwise-equal to the dense product, looks at how the output drifts as k
shrinks, and times the kernel against the thing it exists to avoid: full
attention over the fine token grid.
"""

import time

import numpy as np

from imtk.numerics import Tensor, RngState, no_grad
from imtk.numerics import functional as F
from imtk.motion_transfer import guided_sparse_resample


def random_inputs(rng, hc, s, c=8, batch=2):
    n_c = hc * hc
    logits = rng.standard_normal((batch, n_c, n_c)).astype(np.float32)
    a = F.softmax_rows(Tensor(logits))
    v = Tensor(rng.standard_normal((batch, c, hc * s, hc * s)).astype(np.float32))
    return a, v


def dense_reference(a, v):
    """Plain numpy: upsample the map on both token axes, apply to the values."""
    b, c, hf, wf = v.shape
    hc = int(round(a.shape[1] ** 0.5))
    s = hf // hc
    idx = ((np.arange(hf) // s)[:, None] * hc + (np.arange(wf) // s)[None, :]).ravel()
    up = a[:, idx][:, :, idx] / (s * s)
    tokens = v.reshape(b, c, hf * wf).transpose(0, 2, 1)
    return (up @ tokens).transpose(0, 2, 1).reshape(b, c, hf, wf)


def time_ms(fn, reps=5):
    fn()  # warm
    t0 = time.time()
    for _ in range(reps):
        fn()
    return (time.time() - t0) / reps * 1e3


def main():
    rng = RngState(3).stream("demo", "resample")

    a, v = random_inputs(rng, hc=8, s=2)
    n_f = v.data.shape[2] * v.data.shape[3]

    full = guided_sparse_resample(a, v, k=n_f)
    dense = dense_reference(a.data.astype(np.float32), v.data)
    err = float(np.max(np.abs(full.data - dense)))
    print("k = N (%d): max abs diff vs plain-numpy dense product = %.1e" % (n_f, err))
    assert err < 1e-5

    print("sparsification drift (mean |sparse - dense|):")
    for k in (n_f // 2, n_f // 4, 32, 8, 1):
        out = guided_sparse_resample(a, v, k=k)
        drift = float(np.abs(out.data - dense).mean())
        print("  k = %4d   %.5f" % (k, drift))

    # The point of the kernel: the coarse map stays 16x16 tokens while the
    # value grid grows, so cost grows ~linearly in N. Forming real attention
    # over the N fine tokens instead grows ~quadratically.
    print("fixed 256-token coarse map vs full fine attention, k = 16:")
    dim = 32
    for s in (1, 2, 4):
        a, v = random_inputs(rng, hc=16, s=s, c=dim, batch=1)
        n = v.data.shape[2] * v.data.shape[3]
        q = Tensor(rng.standard_normal((1, n, dim)).astype(np.float32))
        kk = Tensor(rng.standard_normal((1, n, dim)).astype(np.float32))
        vals = Tensor(rng.standard_normal((1, n, dim)).astype(np.float32))

        def run_sparse():
            with no_grad():
                guided_sparse_resample(a, v, 16)

        def run_dense():
            with no_grad():
                F.scaled_dot_attention(q, kk, vals)

        print("  N = %5d   guided resample %8.2f ms   full attention %8.2f ms"
              % (n, time_ms(run_sparse), time_ms(run_dense)))


if __name__ == "__main__":
    main()
