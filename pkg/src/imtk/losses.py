"""Renderer training losses.

Reconstruction is plain L1. The perceptual term compares activations of a
frozen randomly initialized conv stack; random features are a weak but
honest stand-in for a pretrained perceptual net and keep the package free of
external weights. Adversarial terms use the hinge formulation against a
strided patch discriminator. The composite weights are
1 * rec + 10 * perceptual + 0.2 * gan + 1 * dist.
"""

import numpy as np

from .numerics import Module, ModuleList, Conv2d, RngState
from .numerics import functional as F

__all__ = ["rec_loss", "FeatureStack", "perceptual_loss", "gan_g_loss",
           "gan_d_loss", "total_renderer_loss", "PatchDiscriminator"]


def rec_loss(pred, target):
    return F.absolute(pred - target).mean()


class FeatureStack(Module):
    """Frozen 4-level random conv pyramid used for perceptual distance."""

    def __init__(self, seed=0, widths=(8, 16, 32, 64)):
        super().__init__()
        rng = RngState(seed).stream("perceptual", "init")
        self.convs = ModuleList()
        in_c = 3
        for w in widths:
            self.convs.append(Conv2d(in_c, w, 3, rng, stride=2))
            in_c = w
        self.freeze()

    def forward(self, x):
        feats = []
        h = x
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.2)
            feats.append(h)
        return feats


def perceptual_loss(stack, pred, target):
    """Sum over levels of the L2 distance between feature maps.

    Uses a sqrt with zero subgradient at zero, so identical inputs give an
    exactly zero loss and a finite gradient.
    """
    total = None
    for fp, ft in zip(stack(pred), stack(target)):
        d = fp - ft
        lvl = F.safe_sqrt((d * d).sum())
        total = lvl if total is None else total + lvl
    return total * (1.0 / pred.shape[0])


def gan_g_loss(d_fake):
    """Non-saturating hinge generator loss: -E[D(fake)]."""
    return -d_fake.mean()


def gan_d_loss(d_real, d_fake):
    """Hinge discriminator loss: E[relu(1 - D(real))] + E[relu(1 + D(fake))]."""
    return F.relu(1.0 - d_real).mean() + F.relu(1.0 + d_fake).mean()


def total_renderer_loss(parts, weights):
    return (weights.lambda_rec * parts["rec"]
            + weights.lambda_lpips * parts["lpips"]
            + weights.lambda_gan * parts["gan"]
            + weights.lambda_dist * parts["dist"])


class PatchDiscriminator(Module):
    """Strided conv stack scoring overlapping patches; output is a score map."""

    def __init__(self, rng, base=32, levels=4):
        super().__init__()
        self.convs = ModuleList()
        in_c = 3
        for i in range(levels):
            out_c = min(base << i, 256)
            self.convs.append(Conv2d(in_c, out_c, 3, rng, stride=2))
            in_c = out_c
        self.head = Conv2d(in_c, 1, 3, rng)

    def forward(self, x):
        h = x
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.2)
        return self.head(h)
