"""Identity-adaptive motion refinement.

A small MLP nudges a motion latent toward the habits of a particular face:
z' = z + MLP([z, f_global]). The last layer starts at zero so a fresh adapter
is exactly the identity map and training can only move away from neutral.

dist_loss pushes adapted latents toward an identity-centered sphere: for one
motion latent and two different identity vectors it penalizes the difference
of the two L1 distances, so all identities end up equally far (in L1) from
the shared motion code.
"""

import numpy as np

from .numerics import Module, Linear
from .numerics import functional as F

__all__ = ["IdentityAdapter", "dist_loss"]


class IdentityAdapter(Module):
    def __init__(self, d_z, d_f, rng, hidden=(128, 128)):
        super().__init__()
        dims = [d_z + d_f, *hidden, d_z]
        self.layers = []
        for i in range(len(dims) - 1):
            last = i == len(dims) - 2
            layer = Linear(dims[i], dims[i + 1], rng, zero_init=last)
            setattr(self, "fc%d" % i, layer)
            self.layers.append(layer)

    def forward(self, z, f_global):
        h = F.concat([z, f_global], axis=-1)
        for layer in self.layers[:-1]:
            h = F.leaky_relu(layer(h), 0.2)
        return z + self.layers[-1](h)


def dist_loss(z, z_a, z_b):
    """| ||z - z_a||_1 - ||z - z_b||_1 |, averaged over any batch dims."""
    da = F.absolute(z - z_a).sum(axis=-1)
    db = F.absolute(z - z_b).sum(axis=-1)
    return F.absolute(da - db).mean()
