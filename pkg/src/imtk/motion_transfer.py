"""Implicit motion transfer.

A latent-conditioned decoder (shared weights, called once per motion latent)
turns each motion code into a pyramid of motion maps. At coarse scales the
driving map queries the source map over appearance features with full
cross-attention. The finest scale never forms its own attention: the last
coarse attention map is upsampled, trimmed to the top-k entries per row,
renormalized, and applied to the fine appearance values directly. That keeps
the fine scale O(N*k) instead of O(N^2).
"""

import numpy as np

from .numerics import Module, ModuleList, Parameter, Conv2d, Linear, ShapeError, Tensor
from .numerics import functional as F

__all__ = ["modulated_conv", "MotionDecoder", "ScaleCrossAttention",
           "guided_sparse_resample", "MotionTransfer"]


def modulated_conv(x, weight, style, demodulate=True, eps=1e-8):
    """3x3/1x1 convolution with per-sample input-channel modulation.

    x [B,Cin,H,W], weight [Cout,Cin,kh,kw], style [Cin] or [B,Cin]. The
    effective kernel is weight scaled by style per input channel; with
    demodulate each output channel is rescaled to unit L2 norm. Stride 1,
    same padding. With style of ones and demodulate off this is plain conv2d.
    """
    if weight.ndim != 4:
        raise ShapeError("weight must be [Cout,Cin,kh,kw], got %s" % (weight.shape,))
    cout, cin, kh, kw = weight.shape
    if x.shape[1] != cin:
        raise ShapeError("x has %d channels, weight expects %d" % (x.shape[1], cin))
    if style.ndim == 1:
        style = style.reshape(1, style.shape[0])
    if style.ndim != 2 or style.shape[1] != cin:
        raise ShapeError("style must be [Cin] or [B,Cin] with Cin=%d, got %s"
                         % (cin, style.shape))
    b = max(x.shape[0], style.shape[0])

    w = weight.reshape(1, cout, cin, kh, kw) * style.reshape(style.shape[0], 1, cin, 1, 1)
    if demodulate:
        norm_sq = (w * w).sum(axis=(2, 3, 4), keepdims=True)
        w = w * (norm_sq + eps) ** -0.5

    cols, oh, ow = F.im2col(x, kh, kw, stride=1, pad=kh // 2)
    out = w.reshape(w.shape[0], cout, cin * kh * kw) @ cols
    return out.reshape(b, cout, oh, ow)


class MotionDecoder(Module):
    """Motion latent -> pyramid of motion maps at the coarse scales.

    Starts from a learned constant at the bottleneck resolution; each stage
    (after the first) doubles resolution with nearest upsampling, then applies
    a modulated conv whose style is an affine of the latent. One set of
    weights serves every latent, so identical latents give identical maps.
    """

    def __init__(self, scale, rng):
        super().__init__()
        self.resolutions = scale.coarse_resolutions()
        r0 = self.resolutions[0]
        c0 = scale.channels_at(r0)
        self.const = Parameter(rng.standard_normal((1, c0, r0, r0)).astype(np.float32))
        self.weights = []
        self.biases = []
        self.affines = ModuleList()
        in_c = c0
        for i, res in enumerate(self.resolutions):
            out_c = scale.channels_at(res)
            fan_in = in_c * 9
            w = Parameter((rng.standard_normal((out_c, in_c, 3, 3))
                           * np.sqrt(2.0 / fan_in)).astype(np.float32))
            bias = Parameter(np.zeros(out_c, dtype=np.float32))
            setattr(self, "w%d" % i, w)
            setattr(self, "b%d" % i, bias)
            self.weights.append(w)
            self.biases.append(bias)
            affine = Linear(scale.d_z, in_c, rng)
            affine.bias.data[:] = 1.0  # styles start near identity modulation
            self.affines.append(affine)
            in_c = out_c

    def forward(self, z):
        b = z.shape[0]
        x = self.const + Tensor(np.zeros((b, 1, 1, 1), dtype=np.float32))
        maps = {}
        for i, res in enumerate(self.resolutions):
            if x.shape[2] != res:
                x = F.upsample_nearest2d(x, 2)
            style = self.affines[i](z)
            x = modulated_conv(x, self.weights[i], style)
            x = x + self.biases[i].reshape(1, x.shape[1], 1, 1)
            x = F.leaky_relu(x, 0.2)
            maps[res] = x
        return maps


class ScaleCrossAttention(Module):
    """One coarse scale: driving map queries source map, values are appearance.

    Q = proj_q(M_D), K = proj_k(M_S), V = proj_v(f_dense), all 1x1 convs,
    maps flattened to token rows. Returns the aligned map and the attention
    matrix (rows sum to 1 over source positions).
    """

    def __init__(self, c_motion, c_feat, rng):
        super().__init__()
        self.proj_q = Conv2d(c_motion, c_motion, 1, rng, pad=0)
        self.proj_k = Conv2d(c_motion, c_motion, 1, rng, pad=0)
        self.proj_v = Conv2d(c_feat, c_feat, 1, rng, pad=0)

    @staticmethod
    def _tokens(x):
        b, c, h, w = x.shape
        return x.reshape(b, c, h * w).transpose(0, 2, 1)

    def forward(self, m_d, m_s, f_dense):
        b, c, h, w = f_dense.shape
        q = self._tokens(self.proj_q(m_d))
        k = self._tokens(self.proj_k(m_s))
        v = self._tokens(self.proj_v(f_dense))
        out, attn = F.scaled_dot_attention(q, k, v)
        out = out.transpose(0, 2, 1).reshape(b, c, h, w)
        return out, attn


def _fine_to_coarse_index(hf, wf, s):
    wc = wf // s
    return ((np.arange(hf) // s)[:, None] * wc + (np.arange(wf) // s)[None, :]).ravel()


def guided_sparse_resample(a_coarse, v_high, k, renormalize=True):
    """Apply a coarse attention map to fine values through top-k sparsification.

    a_coarse [B,N_c,N_c] with rows summing to 1, v_high [B,C,Hf,Wf] where
    Hf*Wf = s^2 * N_c for an integer upsampling factor s. The coarse map is
    nearest-upsampled along both token axes (divided by s^2 to keep rows
    normalized), each row keeps its k largest entries, rows are renormalized,
    and the result weights the fine values. With k equal to the full row the
    trim is a no-op and the dense product is returned untouched.
    """
    if a_coarse.ndim != 3 or a_coarse.shape[1] != a_coarse.shape[2]:
        raise ShapeError("a_coarse must be [B,N,N], got %s" % (a_coarse.shape,))
    if v_high.ndim != 4:
        raise ShapeError("v_high must be [B,C,Hf,Wf], got %s" % (v_high.shape,))
    n_c = a_coarse.shape[1]
    hc = int(round(np.sqrt(n_c)))
    if hc * hc != n_c:
        raise ShapeError("coarse grid must be square, got %d tokens" % n_c)
    b, c, hf, wf = v_high.shape
    if hf % hc != 0 or wf % hc != 0 or hf // hc != wf // hc:
        raise ShapeError("fine grid %dx%d is not an integer square multiple of "
                         "coarse %dx%d" % (hf, wf, hc, hc))
    s = hf // hc
    n_f = hf * wf

    idx = _fine_to_coarse_index(hf, wf, s)
    expanded = F.take(a_coarse, idx, axis=2) * (1.0 / (s * s))
    if k == n_f:
        weights = expanded  # full row kept: renormalizing a unit row is a no-op
    else:
        kept = F.topk_row_mask(expanded, k)
        weights = kept / kept.sum(axis=-1, keepdims=True) if renormalize else kept

    v_tokens = v_high.reshape(b, c, n_f).transpose(0, 2, 1)
    out_coarse = weights @ v_tokens
    out_fine = F.take(out_coarse, idx, axis=1)
    return out_fine.transpose(0, 2, 1).reshape(b, c, hf, wf)


class MotionTransfer(Module):
    """Decode both motion latents and align the appearance pyramid.

    Coarse scales get full cross-attention; fine scales reuse the finest
    coarse attention map through the sparse resampler (top-k, default 16).
    Returns the aligned pyramid (same resolutions and channel widths as the
    input pyramid) and the guiding attention map.
    """

    def __init__(self, scale, rng, resample_k=16):
        super().__init__()
        self.scale = scale
        self.resample_k = resample_k
        self.decoder = MotionDecoder(scale, rng)
        self.attn = ModuleList()
        for res in scale.coarse_resolutions():
            ch = scale.channels_at(res)
            self.attn.append(ScaleCrossAttention(ch, ch, rng))

    def forward(self, f_dense, z_src, z_drv):
        m_src = self.decoder(z_src)
        m_drv = self.decoder(z_drv)
        aligned = {}
        a_guide = None
        for i, res in enumerate(self.scale.coarse_resolutions()):
            aligned[res], a_guide = self.attn[i](m_drv[res], m_src[res], f_dense[res])
        for res in self.scale.fine_resolutions():
            v = f_dense[res]
            k = min(self.resample_k, v.shape[2] * v.shape[3])
            aligned[res] = guided_sparse_resample(a_guide, v, k)
        return aligned, a_guide
