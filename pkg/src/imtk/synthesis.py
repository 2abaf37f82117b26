"""Image synthesis from the aligned appearance pyramid.

The decoder walks the pyramid coarse to fine. Each level injects the aligned
map through a 1x1 conv, refines with a residual conv block, runs spatial
self-attention, and doubles resolution. Coarse grids afford full attention;
the fine grid uses windowed attention with a cyclically shifted second
pattern so information still crosses window borders. A pixel-shuffle head
doubles resolution once more, so the output is 2x the encoder input.
"""

import numpy as np

from .numerics import Module, ModuleList, Conv2d, Linear, Tensor, ShapeError
from .numerics import functional as F

__all__ = ["WindowAttention", "SynthesisNetwork", "write_ppm"]


def _partition(x, w):
    # [B,H,W,C] -> [B*nW, w*w, C]
    b, h, wd, c = x.shape
    x = x.reshape(b, h // w, w, wd // w, w, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b * (h // w) * (wd // w), w * w, c)


def _unpartition(x, w, b, h, wd):
    c = x.shape[-1]
    x = x.reshape(b, h // w, wd // w, w, w, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, h, wd, c)


def _shift_mask(h, w, window, shift):
    """Additive attention mask for a cyclically shifted window grid.

    After rolling by -shift, pixels that wrapped around sit next to pixels
    from the far side of the image. Label each of the nine canvas regions,
    partition the labels like the data, and forbid attention between tokens
    whose labels differ.
    """
    ids = np.zeros((h, w), dtype=np.int64)
    n = 0
    spans = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    for hs in spans:
        for ws in spans:
            ids[hs, ws] = n
            n += 1
    flat = _partition(ids[None, :, :, None].astype(np.float32), window)[:, :, 0]
    same = flat[:, :, None] == flat[:, None, :]
    return np.where(same, 0.0, -1e9).astype(np.float32)


class WindowAttention(Module):
    """Self-attention over square windows with optional cyclic shift.

    Residual: returns x + proj(attention(x)), so zeroed projection weights
    make the layer an exact identity. window == H with shift 0 degenerates
    to full self-attention over the flattened map.
    """

    def __init__(self, dim, window, shift, rng):
        super().__init__()
        if shift >= window:
            raise ShapeError("shift %d must be < window %d" % (shift, window))
        self.window = window
        self.shift = shift
        self.to_q = Linear(dim, dim, rng)
        self.to_k = Linear(dim, dim, rng)
        self.to_v = Linear(dim, dim, rng)
        self.to_out = Linear(dim, dim, rng)

    def forward(self, x):
        b, c, h, w = x.shape
        win, shift = self.window, self.shift
        if h % win or w % win:
            raise ShapeError("window %d must divide grid %dx%d" % (win, h, w))
        t = x.transpose(0, 2, 3, 1)
        if shift:
            t = F.roll(t, (-shift, -shift), axis=(1, 2))
        t = _partition(t, win)
        q, k, v = self.to_q(t), self.to_k(t), self.to_v(t)
        extra = None
        if shift:
            mask = _shift_mask(h, w, win, shift)
            extra = np.tile(mask, (b, 1, 1))
        att, _ = F.scaled_dot_attention(q, k, v, extra_scores=extra)
        t = self.to_out(att)
        t = _unpartition(t, win, b, h, w)
        if shift:
            t = F.roll(t, (shift, shift), axis=(1, 2))
        return x + t.transpose(0, 3, 1, 2)


class SynthesisNetwork(Module):
    def __init__(self, scale, rng, window=8):
        super().__init__()
        from .encoders import ResConvBlock
        self.scale = scale
        self.resolutions = sorted(scale.tap_resolutions())
        coarse = set(scale.coarse_resolutions())
        self.inject = ModuleList()
        self.blocks = ModuleList()
        self.attn = ModuleList()
        entry = scale.channels_at(self.resolutions[0])
        self.entry_channels = entry
        for res in self.resolutions:
            ch = scale.channels_at(res)
            self.inject.append(Conv2d(ch, entry, 1, rng, pad=0))
            self.blocks.append(ResConvBlock(entry, ch, rng))
            if res in coarse:
                win, shift = res, 0  # grid fits one window: plain full attention
            else:
                win = min(window, res)
                shift = win // 2 if res > win else 0
            self.attn.append(WindowAttention(ch, win, shift, rng))
            entry = ch
        self.head = Conv2d(entry, 12, 3, rng)
        # keep the initial pre-tanh activations small; at full he-init scale
        # most pixels start railed at +-1 and the tanh gradient vanishes
        self.head.weight.data *= 0.1

    def forward(self, aligned):
        r0 = self.resolutions[0]
        b = aligned[r0].shape[0]
        h = Tensor(np.zeros((b, self.entry_channels, r0, r0), dtype=np.float32))
        for i, res in enumerate(self.resolutions):
            h = h + self.inject[i](aligned[res])
            h = self.blocks[i](h)
            h = self.attn[i](h)
            h = F.upsample_nearest2d(h, 2)
        h = self.head(h)
        return F.tanh(F.pixel_shuffle(h, 2))


def write_ppm(path, img):
    """Write a [3,H,W] image in [-1,1] as a binary PPM (P6) file."""
    if isinstance(img, Tensor):
        img = img.data
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError("expected [3,H,W] image, got %s" % (img.shape,))
    u8 = np.clip((img + 1.0) * 127.5 + 0.5, 0, 255).astype(np.uint8)
    hwc = np.ascontiguousarray(u8.transpose(1, 2, 0))
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (img.shape[2], img.shape[1]))
        f.write(hwc.tobytes())
