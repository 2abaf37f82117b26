"""End-to-end talking-face renderer.

Pipeline: encode the source image into an appearance pyramid plus a global
identity vector, encode source and driving motion latents, personalize both
latents with the identity adapter, transfer appearance through attention
guided by the decoded motion maps, and synthesize the output frame at twice
the input resolution.

The driving motion may come from a driving image (reenactment) or directly as
a latent (e.g. sampled by the motion generator).
"""

from .encoders import IdentityEncoder, MotionEncoder
from .identity_adapt import IdentityAdapter
from .motion_transfer import MotionTransfer
from .numerics import Module
from .synthesis import SynthesisNetwork

__all__ = ["Renderer"]


class Renderer(Module):
    def __init__(self, scale, rng, resample_k=16, window=8, adapt_hidden=(128, 128)):
        super().__init__()
        self.scale = scale
        self.enc_id = IdentityEncoder(scale, rng)
        self.enc_motion = MotionEncoder(scale, rng)
        self.adapter = IdentityAdapter(scale.d_z, scale.channels(scale.levels), rng,
                                       hidden=adapt_hidden)
        self.transfer = MotionTransfer(scale, rng, resample_k=resample_k)
        self.synthesis = SynthesisNetwork(scale, rng, window=window)

    def forward(self, src_img, drv_img=None, z_drv=None):
        """Render src_img under the driving motion.

        Exactly one of drv_img (an image batch) or z_drv (a raw motion latent
        batch) must be given. Returns a dict with the rendered frame plus the
        intermediates needed by the training losses.
        """
        if (drv_img is None) == (z_drv is None):
            raise ValueError("give exactly one of drv_img or z_drv")
        f_global, f_dense = self.enc_id(src_img)
        z_src = self.enc_motion(src_img)
        if z_drv is None:
            z_drv = self.enc_motion(drv_img)
        zp_src = self.adapter(z_src, f_global)
        zp_drv = self.adapter(z_drv, f_global)
        aligned, a_guide = self.transfer(f_dense, zp_src, zp_drv)
        out = self.synthesis(aligned)
        return {"image": out, "f_global": f_global, "z_src": z_src, "z_drv": z_drv,
                "zp_src": zp_src, "zp_drv": zp_drv, "attention": a_guide}

    @property
    def output_res(self):
        return self.scale.input_res * 2
