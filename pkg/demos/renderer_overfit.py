"""End-to-end reenactment on synthetic faces, small enough to overfit live.

Builds a 32px renderer, overfits it to a handful of procedurally generated
face frames, and writes PPM images of the source, the driving frame, and the
render before/after training. Takes under a minute on a laptop CPU.

Output lands in demos/out_renderer/.
"""

import os
import time

import numpy as np

from imtk.config import ModelScale, TrainConfig, LossWeights, RunConfig
from imtk.data import make_dataset
from imtk.numerics import Tensor, no_grad
from imtk.synthesis import write_ppm
from imtk.training import RendererTrainer

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "out_renderer")


def render_pair(trainer, src, drv):
    with no_grad():
        out = trainer.renderer(Tensor(src[None]), drv_img=Tensor(drv[None]))
    return out["image"].data[0]


def main():
    os.makedirs(OUT, exist_ok=True)

    cfg = RunConfig(
        scale=ModelScale(input_res=32, base_channels=16, levels=3, d_z=16),
        train=TrainConfig(lr=1e-3, batch=4, steps=120, seed=0,
                          weights=LossWeights(lambda_lpips=0.0, lambda_gan=0.0)),
    )
    data = make_dataset(seed=0, n_identities=4, frames_per_identity=2, res=32)
    trainer = RendererTrainer(cfg)

    # identity 0 drives with identity 0's second frame; held fixed for the
    # before/after comparison
    src, drv = data["frames_lo"][0, 0], data["frames_lo"][0, 1]
    write_ppm(os.path.join(OUT, "source.ppm"), src)
    write_ppm(os.path.join(OUT, "driving.ppm"), drv)
    write_ppm(os.path.join(OUT, "render_step0.ppm"), render_pair(trainer, src, drv))

    t0 = time.time()
    for _ in range(cfg.train.steps):
        row = trainer.step(trainer.sample_batch(data))
        if row["step"] % 20 == 0 or row["step"] == 1:
            print("step %4d  rec %.4f  dist %.4f  total %.4f"
                  % (row["step"], row["rec"], row["dist"], row["total"]))
    print("%d steps in %.1fs" % (cfg.train.steps, time.time() - t0))

    img = render_pair(trainer, src, drv)
    write_ppm(os.path.join(OUT, "render_trained.ppm"), img)
    target = data["frames_hi"][0, 1]
    l1 = float(np.abs(img - target).mean())
    print("L1 to the 64px target frame after training: %.4f" % l1)
    print("wrote source/driving/render PPMs to %s" % OUT)


if __name__ == "__main__":
    main()
