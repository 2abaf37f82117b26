import numpy as np
import pytest

from imtk.config import LossWeights
from imtk.losses import (FeatureStack, PatchDiscriminator, gan_d_loss,
                         gan_g_loss, perceptual_loss, rec_loss,
                         total_renderer_loss)
from imtk.numerics import RngState, Tensor
from imtk.numerics.gradcheck import run_case


def _img(rng, b=2, res=16):
    return Tensor(rng.standard_normal((b, 3, res, res)).astype(np.float32))


def test_rec_loss_closed_form():
    a = Tensor(np.array([[1.0, -3.0]], np.float32))
    b = Tensor(np.zeros((1, 2), np.float32))
    assert abs(float(rec_loss(a, b).data) - 2.0) < 1e-7
    assert float(rec_loss(b, b).data) == 0.0


def test_perceptual_zero_on_identical_inputs():
    stack = FeatureStack(seed=0, widths=(4, 8))
    x = _img(np.random.default_rng(0))
    assert float(perceptual_loss(stack, x, x).data) == 0.0
    y = _img(np.random.default_rng(1))
    assert float(perceptual_loss(stack, x, y).data) > 0.0


def test_feature_stack_frozen_and_reproducible():
    a = FeatureStack(seed=3, widths=(4, 8))
    b = FeatureStack(seed=3, widths=(4, 8))
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.data, pb.data)
        assert not pa.requires_grad
    c = FeatureStack(seed=4, widths=(4, 8))
    assert any(not np.array_equal(pa.data, pc.data)
               for pa, pc in zip(a.parameters(), c.parameters()))


def test_perceptual_scales_inversely_with_batch():
    # the per-level L2 is over the whole batch, then divided by batch size
    stack = FeatureStack(seed=0, widths=(4,))
    rng = np.random.default_rng(2)
    x1 = _img(rng, b=1)
    y1 = _img(rng, b=1)
    single = float(perceptual_loss(stack, x1, y1).data)
    x2 = Tensor(np.concatenate([x1.data, x1.data]))
    y2 = Tensor(np.concatenate([y1.data, y1.data]))
    double = float(perceptual_loss(stack, x2, y2).data)
    # duplicating the pair doubles the summed square, sqrt gives sqrt(2),
    # and the 1/B prefactor halves it
    assert abs(double - single * np.sqrt(2.0) / 2.0) < 1e-5


def test_hinge_losses_closed_forms():
    zeros = Tensor(np.zeros((2, 1, 3, 3), np.float32))
    assert abs(float(gan_d_loss(zeros, zeros).data) - 2.0) < 1e-7
    real_good = Tensor(np.full((2, 1, 3, 3), 1.5, np.float32))
    fake_good = Tensor(np.full((2, 1, 3, 3), -1.5, np.float32))
    assert float(gan_d_loss(real_good, fake_good).data) == 0.0
    assert abs(float(gan_g_loss(fake_good).data) - 1.5) < 1e-7
    # margin violations are penalized linearly
    real_bad = Tensor(np.full((1, 1), -1.0, np.float32))
    fake_bad = Tensor(np.full((1, 1), 1.0, np.float32))
    assert abs(float(gan_d_loss(real_bad, fake_bad).data) - 4.0) < 1e-7


def test_total_loss_unit_parts():
    # evaluated in float64 so the 0.2 weight is exact to well below 1e-9
    one = Tensor(np.ones((), np.float64))
    parts = {"rec": one, "lpips": one, "gan": one, "dist": one}
    total = total_renderer_loss(parts, LossWeights())
    assert abs(float(total.data) - 12.2) < 1e-9


def test_total_loss_respects_weights():
    parts = {"rec": Tensor(np.float32(2.0)), "lpips": Tensor(np.float32(3.0)),
             "gan": Tensor(np.float32(5.0)), "dist": Tensor(np.float32(7.0))}
    w = LossWeights(lambda_rec=1.0, lambda_lpips=0.0, lambda_gan=0.0,
                    lambda_dist=2.0)
    assert abs(float(total_renderer_loss(parts, w).data) - 16.0) < 1e-6


def test_patch_discriminator_score_map():
    disc = PatchDiscriminator(RngState(0).stream("d"), base=4, levels=2)
    x = _img(np.random.default_rng(3), b=2, res=16)
    out = disc(x)
    assert out.shape == (2, 1, 4, 4)
    # patch scores are local: a far-away pixel edit leaves most scores alone
    x2 = Tensor(x.data.copy())
    x2.data[:, :, 0, 0] += 1.0
    diff = np.abs(disc(x2).data - out.data)
    assert diff[0, 0, -1, -1] == 0.0 and diff.max() > 0.0


def test_discriminator_channel_cap():
    disc = PatchDiscriminator(RngState(1).stream("d"), base=128, levels=3)
    widths = [c.weight.shape[0] for c in disc.convs]
    assert widths == [128, 256, 256]


def test_perceptual_gradients():
    def factory(rng):
        stack = FeatureStack(seed=5, widths=(4,))
        for p in stack.parameters():
            p.data = p.data.astype(np.float64)
        x = rng.standard_normal((1, 3, 8, 8))
        y = rng.standard_normal((1, 3, 8, 8))

        def build(xt, yt):
            return perceptual_loss(stack, xt, yt)

        return build, [x, y]

    assert run_case(factory, np.random.default_rng(4)) < 1e-4


def test_hinge_gradients():
    def factory(rng):
        # keep scores away from the hinge knee at +-1
        real = 0.4 * rng.standard_normal((2, 1, 3, 3))
        fake = 0.4 * rng.standard_normal((2, 1, 3, 3))

        def build(rt, ft):
            # 0.5 weight: with weight 1 the fake-branch gradients of the two
            # terms cancel exactly, leaving nothing to compare against
            return gan_d_loss(rt, ft) + 0.5 * gan_g_loss(ft)

        return build, [real, fake]

    assert run_case(factory, np.random.default_rng(5)) < 1e-4
