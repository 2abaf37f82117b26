"""Walk through the reverse-mode autodiff core on a small expression graph.

Builds y = tanh(W2 @ relu(W1 @ x + b1)) by hand, backprops a scalar loss,
and checks every gradient against central finite differences. Then runs the
package's full operator gradient-check suite for good measure.
"""

import time

import numpy as np

from imtk.numerics import Tensor, RngState
from imtk.numerics import functional as F
from imtk.numerics.gradcheck import finite_diff_grad, max_rel_err, grad_check_all


def tiny_mlp_loss(params, x):
    w1, b1, w2 = params
    h = F.relu(x @ w1 + b1)
    y = F.tanh(h @ w2)
    # scalar target: mean squared activation, enough to light up every path
    return (y * y).mean()


def main():
    rng = RngState(7).stream("demo", "autodiff")

    # f64 inputs so the finite-difference reference is trustworthy
    w1 = Tensor(rng.standard_normal((5, 8)) * 0.5, requires_grad=True)
    b1 = Tensor(rng.standard_normal(8) * 0.1, requires_grad=True)
    w2 = Tensor(rng.standard_normal((8, 3)) * 0.5, requires_grad=True)
    x = Tensor(rng.standard_normal((4, 5)))

    loss = tiny_mlp_loss((w1, b1, w2), x)
    loss.backward()
    print("loss = %.6f" % float(loss.data))

    for name, p in [("w1", w1), ("b1", b1), ("w2", w2)]:
        def f(v, p=p):
            old = p.data
            p.data = v
            out = float(tiny_mlp_loss((w1, b1, w2), x).data)
            p.data = old
            return out

        numeric = finite_diff_grad(f, p.data)
        err = max_rel_err(p.grad, numeric)
        print("  d/d%-2s  analytic vs numeric  max rel err = %.3e" % (name, err))
        assert err < 1e-6

    # the package-wide suite: every primitive op, fresh random case each
    t0 = time.time()
    report = grad_check_all(seed=0)
    worst = max(r["rel_err"] for r in report)
    print("op suite: %d cases, worst rel err %.3e, %.2fs"
          % (len(report), worst, time.time() - t0))
    assert all(r["ok"] for r in report)
    print("all gradients agree with finite differences")


if __name__ == "__main__":
    main()
