import numpy as np
import pytest

from imtk.config import ModelScale
from imtk.numerics import RngState, ShapeError, Tensor
from imtk.numerics.gradcheck import run_case
from imtk.synthesis import (SynthesisNetwork, WindowAttention, _partition,
                            _shift_mask, _unpartition, write_ppm)

TINY = ModelScale(input_res=16, base_channels=8, levels=2, d_z=4)


def test_partition_round_trip():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 8, 8, 3)).astype(np.float32)
    back = _unpartition(_partition(x, 4), 4, 2, 8, 8)
    assert np.array_equal(back, x)
    assert _partition(x, 4).shape == (2 * 4, 16, 3)


def test_shift_mask_structure():
    m = _shift_mask(8, 8, 4, 2)
    assert m.shape == (4, 16, 16)
    assert set(np.unique(m)) <= {0.0, -1e9}
    # tokens always attend to themselves
    assert np.all(m[:, np.arange(16), np.arange(16)] == 0.0)
    # the window that never crossed the wrap boundary is unmasked
    assert np.all(m[0] == 0.0)
    # windows on the rolled edges mix regions, so some pairs are forbidden
    assert (m[-1] == -1e9).any()
    assert np.array_equal(m[-1], m[-1].T)


def test_zero_projection_is_identity():
    attn = WindowAttention(8, 4, 2, RngState(0).stream("wa"))
    attn.to_out.weight.data[:] = 0.0
    attn.to_out.bias.data[:] = 0.0
    x = Tensor(np.random.default_rng(1).standard_normal((2, 8, 8, 8))
               .astype(np.float32))
    assert np.array_equal(attn(x).data, x.data)


def _np_softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _apply_linear(tok, lin):
    return tok @ lin.weight.data.T + lin.bias.data


def _region_id(y, x, h, w, window, shift):
    # independent per-pixel restatement of the nine-region labelling
    def band(p, size):
        if p < size - window:
            return 0
        if p < size - shift:
            return 1
        return 2
    return band(y, h, ) * 3 + band(x, w)


def _oracle_window_attention(x, mod):
    """Loop-based shifted-window attention used as a reference."""
    win, shift = mod.window, mod.shift
    b, c, h, w = x.shape
    t = np.roll(x.transpose(0, 2, 3, 1), (-shift, -shift), axis=(1, 2))
    out = np.zeros_like(t)
    for bi in range(b):
        for wy in range(0, h, win):
            for wx in range(0, w, win):
                tok = t[bi, wy:wy + win, wx:wx + win].reshape(win * win, c)
                ids = np.array([_region_id(wy + i // win, wx + i % win,
                                           h, w, win, shift)
                                for i in range(win * win)]) if shift else None
                q = _apply_linear(tok, mod.to_q)
                k = _apply_linear(tok, mod.to_k)
                v = _apply_linear(tok, mod.to_v)
                scores = q @ k.T / np.sqrt(c)
                if ids is not None:
                    scores = scores + np.where(ids[:, None] == ids[None, :],
                                               0.0, -1e9)
                o = _apply_linear(_np_softmax(scores) @ v, mod.to_out)
                out[bi, wy:wy + win, wx:wx + win] = o.reshape(win, win, c)
    out = np.roll(out, (shift, shift), axis=(1, 2))
    return x + out.transpose(0, 3, 1, 2)


def test_single_window_equals_full_attention():
    attn = WindowAttention(8, 8, 0, RngState(2).stream("wa"))
    x = 0.5 * np.random.default_rng(3).standard_normal((2, 8, 8, 8))
    x = x.astype(np.float32)
    got = attn(Tensor(x)).data
    ref = _oracle_window_attention(x, attn)
    assert np.abs(got - ref).max() < 1e-6


def test_shifted_window_matches_region_oracle():
    attn = WindowAttention(6, 4, 2, RngState(4).stream("wa"))
    x = 0.5 * np.random.default_rng(5).standard_normal((2, 6, 8, 8))
    x = x.astype(np.float32)
    got = attn(Tensor(x)).data
    ref = _oracle_window_attention(x, attn)
    assert np.abs(got - ref).max() < 1e-6


def test_shift_moves_information_across_windows():
    # with shift, a pixel in one window influences output in the next window
    rng = RngState(6).stream("wa")
    plain = WindowAttention(4, 4, 0, rng)
    shifted = WindowAttention(4, 4, 2, rng)
    base = np.zeros((1, 4, 8, 8), np.float32)
    bumped = base.copy()
    # (3,3) is interior: its shifted window spans the plain window border,
    # while a wrapped pixel would be masked off instead
    bumped[0, :, 3, 3] = 3.0
    d_plain = plain(Tensor(bumped)).data - plain(Tensor(base)).data
    d_shift = shifted(Tensor(bumped)).data - shifted(Tensor(base)).data
    assert np.abs(d_plain[0, :, :, 4:]).max() == 0.0
    assert np.abs(d_shift[0, :, :, 4:]).max() > 0.0


def test_window_attention_shape_errors():
    with pytest.raises(ShapeError):
        WindowAttention(4, 4, 4, RngState(0).stream("wa"))
    attn = WindowAttention(4, 4, 0, RngState(0).stream("wa"))
    with pytest.raises(ShapeError):
        attn(Tensor(np.zeros((1, 4, 6, 6), np.float32)))


def test_window_attention_gradients():
    def factory(rng):
        attn = WindowAttention(4, 4, 2, RngState(8).stream("wa"))
        for p in attn.parameters():
            p.data = p.data.astype(np.float64)
        x = 0.5 * rng.standard_normal((1, 4, 8, 8))

        def build(xt):
            return (attn(xt) ** 2).sum()

        return build, [x]

    assert run_case(factory, np.random.default_rng(9)) < 1e-4


def test_synthesis_output_shape_and_range():
    net = SynthesisNetwork(TINY, RngState(10).stream("syn"), window=4)
    g = np.random.default_rng(11)
    aligned = {res: Tensor(g.standard_normal(
        (2, TINY.channels_at(res), res, res)).astype(np.float32))
        for res in TINY.tap_resolutions()}
    out = net(aligned)
    assert out.shape == (2, 3, 2 * TINY.input_res, 2 * TINY.input_res)
    assert out.data.min() >= -1.0 and out.data.max() <= 1.0


def test_synthesis_uses_every_tap():
    net = SynthesisNetwork(TINY, RngState(12).stream("syn"), window=4)
    g = np.random.default_rng(13)
    aligned = {res: Tensor(g.standard_normal(
        (1, TINY.channels_at(res), res, res)).astype(np.float32))
        for res in TINY.tap_resolutions()}
    base = net(aligned).data
    for res in TINY.tap_resolutions():
        bumped = {r: Tensor(a.data.copy()) for r, a in aligned.items()}
        bumped[res].data += 0.5
        assert np.abs(net(bumped).data - base).max() > 1e-6


def test_write_ppm_bytes(tmp_path):
    img = np.array([[[-1.0, 1.0]], [[0.0, 0.0]], [[1.0, -1.0]]], np.float32)
    path = tmp_path / "a.ppm"
    write_ppm(path, img)
    raw = path.read_bytes()
    assert raw.startswith(b"P6\n2 1\n255\n")
    assert raw[len(b"P6\n2 1\n255\n"):] == bytes([0, 128, 255, 255, 128, 0])
    with pytest.raises(ShapeError):
        write_ppm(tmp_path / "b.ppm", np.zeros((1, 4, 4), np.float32))
