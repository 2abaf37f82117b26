"""Image encoders.

Two convolutional encoders share the same downsampling trunk shape but not
weights: the identity encoder keeps a feature map per scale (the appearance
pyramid) plus a pooled global vector, while the motion encoder throws away
space entirely and reports a small pose latent. Keeping them separate stops
appearance from leaking into the motion latent by construction.

All maps are NCHW float32. Pyramids are dicts keyed by spatial resolution so
callers never depend on list ordering.
"""

import numpy as np

from .numerics import Module, ModuleList, Conv2d, Linear, ShapeError
from .numerics import functional as F

__all__ = ["ResConvBlock", "IdentityEncoder", "MotionEncoder"]


class ResConvBlock(Module):
    """Two 3x3 convs with leaky_relu(0.2) plus a skip path.

    The skip is identity when shape is preserved, otherwise a 1x1 conv;
    downsampling applies stride 2 to the first conv and the skip alike.
    With all conv weights zero the block is exactly the identity.
    """

    def __init__(self, in_c, out_c, rng, downsample=False):
        super().__init__()
        stride = 2 if downsample else 1
        self.conv1 = Conv2d(in_c, out_c, 3, rng, stride=stride)
        self.conv2 = Conv2d(out_c, out_c, 3, rng)
        if in_c != out_c or downsample:
            self.skip = Conv2d(in_c, out_c, 1, rng, stride=stride, pad=0, bias=False)
        else:
            self.skip = None

    def forward(self, x):
        h = F.leaky_relu(self.conv1(x), 0.2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        s = x if self.skip is None else self.skip(x)
        return s + h


def _trunk(scale, rng):
    blocks = ModuleList()
    in_c = 3
    for level in range(1, scale.levels + 1):
        out_c = scale.channels(level)
        blocks.append(ResConvBlock(in_c, out_c, rng, downsample=True))
        in_c = out_c
    return blocks


def _check_input(x, scale):
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError("expected [B,3,H,W] image batch, got %s" % (x.shape,))
    if x.shape[2] != scale.input_res or x.shape[3] != scale.input_res:
        raise ShapeError("expected %dx%d input, got %dx%d"
                         % (scale.input_res, scale.input_res, x.shape[2], x.shape[3]))


class IdentityEncoder(Module):
    """Appearance encoder: multi-scale feature pyramid plus a global vector.

    forward(x) -> (f_global [B, C_max], pyramid {res: [B, C_res, res, res]})
    where f_global is the spatial mean of the bottleneck map.
    """

    def __init__(self, scale, rng):
        super().__init__()
        self.scale = scale
        self.blocks = _trunk(scale, rng)

    def forward(self, x):
        _check_input(x, self.scale)
        pyramid = {}
        h = x
        for block in self.blocks:
            h = block(h)
            pyramid[h.shape[2]] = h
        f_global = h.mean(axis=(2, 3))
        return f_global, pyramid


class MotionEncoder(Module):
    """Pose encoder: conv trunk, global average pool, linear head to d_z."""

    def __init__(self, scale, rng):
        super().__init__()
        self.scale = scale
        self.blocks = _trunk(scale, rng)
        self.head = Linear(scale.channels(scale.levels), scale.d_z, rng)

    def forward(self, x):
        _check_input(x, self.scale)
        h = x
        for block in self.blocks:
            h = block(h)
        return self.head(h.mean(axis=(2, 3)))
