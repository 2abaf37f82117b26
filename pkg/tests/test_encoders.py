import numpy as np
import pytest

from imtk.config import ModelScale
from imtk.encoders import IdentityEncoder, MotionEncoder, ResConvBlock
from imtk.numerics import RngState, ShapeError, Tensor
from imtk.numerics.gradcheck import run_case

TINY = ModelScale(input_res=16, base_channels=8, levels=2, d_z=4)


def _img(seed, b=1, res=16):
    return Tensor(np.random.default_rng(seed).uniform(
        -1, 1, (b, 3, res, res)).astype(np.float32))


def test_zero_residual_block_is_identity():
    blk = ResConvBlock(5, 5, RngState(0).stream("b"))
    for conv in (blk.conv1, blk.conv2):
        conv.weight.data[:] = 0.0
        conv.bias.data[:] = 0.0
    x = Tensor(np.random.default_rng(1).standard_normal((2, 5, 6, 6)).astype(np.float32))
    assert blk.skip is None
    assert np.array_equal(blk(x).data, x.data)


def test_block_downsample_halves_and_projects():
    blk = ResConvBlock(3, 8, RngState(0).stream("b"), downsample=True)
    x = _img(0, b=2)
    out = blk(x)
    assert out.shape == (2, 8, 8, 8)
    assert blk.skip is not None  # channel change forces the 1x1 path


def test_identity_encoder_pyramid_layout():
    scale = ModelScale()  # the default full-size configuration
    enc = IdentityEncoder(scale, RngState(0).stream("e"))
    f_global, pyr = enc(_img(0, res=64))
    assert sorted(pyr.keys()) == [4, 8, 16, 32]
    assert {r: p.shape[1] for r, p in pyr.items()} == {32: 8, 16: 16, 8: 32, 4: 64}
    assert f_global.shape == (1, 64)
    assert np.allclose(f_global.data, pyr[4].data.mean(axis=(2, 3)), atol=1e-7)


def test_motion_encoder_shape():
    enc = MotionEncoder(TINY, RngState(0).stream("m"))
    z = enc(_img(1, b=3))
    assert z.shape == (3, 4)


def test_batch_equals_separate_calls():
    enc_i = IdentityEncoder(TINY, RngState(1).stream("e"))
    enc_m = MotionEncoder(TINY, RngState(1).stream("m"))
    both = _img(2, b=2)
    one = Tensor(both.data[:1].copy())
    two = Tensor(both.data[1:].copy())
    fg_b, pyr_b = enc_i(both)
    fg_1, pyr_1 = enc_i(one)
    fg_2, pyr_2 = enc_i(two)
    assert np.abs(fg_b.data - np.concatenate([fg_1.data, fg_2.data])).max() < 1e-6
    for r in pyr_b:
        stacked = np.concatenate([pyr_1[r].data, pyr_2[r].data])
        assert np.abs(pyr_b[r].data - stacked).max() < 1e-6
    zm = enc_m(both)
    z1, z2 = enc_m(one), enc_m(two)
    assert np.abs(zm.data - np.concatenate([z1.data, z2.data])).max() < 1e-6


def test_translation_changes_motion_latent():
    enc = MotionEncoder(TINY, RngState(2).stream("m"))
    img = np.random.default_rng(3).uniform(-1, 1, (1, 3, 16, 16)).astype(np.float32)
    shifted = np.roll(img, 2, axis=3)
    dz = enc(Tensor(img)).data - enc(Tensor(shifted)).data
    assert np.linalg.norm(dz) > 0.0


def test_wrong_resolution_rejected():
    enc = IdentityEncoder(TINY, RngState(0).stream("e"))
    with pytest.raises(ShapeError):
        enc(_img(0, res=32))
    with pytest.raises(ShapeError):
        enc(Tensor(np.zeros((1, 1, 16, 16), np.float32)))


def test_encoder_chain_gradients():
    # full identity+motion chain at 16x16, finite differences on the image
    def factory(rng):
        enc_i = IdentityEncoder(TINY, RngState(11).stream("e"))
        enc_m = MotionEncoder(TINY, RngState(11).stream("m"))
        for m in (enc_i, enc_m):
            for p in m.parameters():
                p.data = p.data.astype(np.float64)
        img = rng.uniform(-1, 1, (1, 3, 16, 16))

        def build(x):
            f_global, pyr = enc_i(x)
            z = enc_m(x)
            total = (f_global * f_global).sum() + (z * z).sum()
            for r in pyr:
                total = total + pyr[r].mean()
            return total

        return build, [img]

    res = run_case(factory, np.random.default_rng(5))
    assert res < 1e-4, res


def test_encoders_deterministic():
    enc = IdentityEncoder(TINY, RngState(4).stream("e"))
    x = _img(6)
    a = enc(x)[0].data
    b = enc(x)[0].data
    assert np.array_equal(a, b)
