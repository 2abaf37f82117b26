"""Training loops, checkpointing, and whole-pipeline gradient checks.

Renderer training alternates one hinge discriminator step with one composite
generator step per iteration (no schedules, no EMA). Motion-generator
training regresses the flow-matching velocity with per-modality condition
dropout; its motion targets come either from a frozen motion encoder or
directly from the synthetic motion parameters.

All randomness flows through named RNG streams owned by the trainer, and the
stream states ride along in checkpoints, so save/resume is bit-exact.
"""

import json
import os

import numpy as np

from . import data as data_mod
from .config import ConfigError, LossWeights, ModelScale
from .generator import MODALITY_DIMS, MotionGenerator, fm_loss, fm_training_point
from .identity_adapt import IdentityAdapter, dist_loss
from .losses import (FeatureStack, PatchDiscriminator, gan_d_loss, gan_g_loss,
                     perceptual_loss, rec_loss, total_renderer_loss)
from .numerics import (Adam, MissingArtifactError, RngState, Tensor, load_tensors,
                       no_grad, save_tensors)
from .numerics import gradcheck
from .renderer import Renderer

__all__ = ["CHECKPOINT_FORMAT", "save_checkpoint", "load_checkpoint",
           "RendererTrainer", "GeneratorTrainer", "train_adapter_toy",
           "build_composed_cases", "grad_check_all"]

CHECKPOINT_FORMAT = 1


def save_checkpoint(path, modules, optimizers, meta):
    """Write module/optimizer state into one tensor container plus a JSON
    sidecar (path + ".json") holding step, config hash, and RNG state."""
    tensors = {}
    for prefix, m in modules.items():
        for k, v in m.state_dict().items():
            tensors[prefix + "." + k] = v
    for prefix, o in optimizers.items():
        for k, v in o.state_dict().items():
            tensors[prefix + "." + k] = v
    save_tensors(path, tensors)
    tmp = path + ".json.tmp"
    with open(tmp, "w") as f:
        json.dump(meta, f, sort_keys=True, indent=1)
    os.replace(tmp, path + ".json")


def load_checkpoint(path, modules, optimizers):
    entries = load_tensors(path)

    def section(prefix):
        head = prefix + "."
        return {k[len(head):]: v for k, v in entries.items() if k.startswith(head)}

    for prefix, m in modules.items():
        m.load_state_dict(section(prefix))
    for prefix, o in optimizers.items():
        o.load_state_dict(section(prefix))
    sidecar = path + ".json"
    if not os.path.isfile(sidecar):
        raise MissingArtifactError("checkpoint sidecar missing: %s" % sidecar)
    with open(sidecar) as f:
        return json.load(f)


class RendererTrainer:
    def __init__(self, config, perceptual_seed=0, resample_k=16, window=8):
        if config.train.batch < 2:
            raise ConfigError("renderer training needs train.batch >= 2 "
                              "(the distance loss pairs identities)")
        self.config = config
        self.weights = config.train.weights
        self.rng = RngState(config.train.seed)
        self.renderer = Renderer(config.scale, self.rng.stream("init", "renderer"),
                                 resample_k=resample_k, window=window)
        self.use_gan = self.weights.lambda_gan > 0
        self.use_lpips = self.weights.lambda_lpips > 0
        self.disc = None
        self.opt_d = None
        t = config.train
        if self.use_gan:
            self.disc = PatchDiscriminator(self.rng.stream("init", "disc"))
            self.opt_d = Adam(self.disc.parameters(), lr=t.lr, beta1=t.beta1,
                              beta2=t.beta2)
        self.stack = FeatureStack(perceptual_seed) if self.use_lpips else None
        self.opt_g = Adam(self.renderer.parameters(), lr=t.lr, beta1=t.beta1,
                          beta2=t.beta2)
        self.step_count = 0

    def sample_batch(self, dataset):
        """Pick (source frame, driving frame) pairs; slots 0 and 1 are forced
        onto different identities so the distance loss always has a pair."""
        lo, hi = dataset["frames_lo"], dataset["frames_hi"]
        n_id, n_fr = lo.shape[:2]
        if n_id < 2:
            raise ConfigError("renderer training needs at least two identities")
        b = self.config.train.batch
        st = self.rng.stream("train", "batch")
        ids = st.integers(0, n_id, size=b)
        ids[1] = (ids[0] + 1 + st.integers(0, n_id - 1)) % n_id
        src = st.integers(0, n_fr, size=b)
        drv = st.integers(0, n_fr, size=b)
        return {"src": lo[ids, src], "drv": lo[ids, drv],
                "target": hi[ids, drv], "ids": ids}

    @staticmethod
    def _partners(ids):
        out = np.empty(len(ids), dtype=np.int64)
        for i in range(len(ids)):
            match = [j for j in range(len(ids)) if ids[j] != ids[i]]
            if not match:
                raise ConfigError("renderer batch holds a single identity; "
                                  "the distance loss needs two")
            out[i] = match[0]
        return out

    def step(self, batch):
        ids = np.asarray(batch["ids"])
        partners = self._partners(ids)
        src = Tensor(batch["src"])
        drv = Tensor(batch["drv"])
        target = Tensor(batch["target"])

        out = self.renderer(src, drv_img=drv)
        img = out["image"]

        d_val = 0.0
        if self.use_gan:
            self.disc.zero_grad()
            d_loss = gan_d_loss(self.disc(target), self.disc(img.detach()))
            d_loss.backward()
            self.opt_d.step()
            d_val = float(d_loss.data)

        zero = Tensor(np.float32(0.0))
        parts = {
            "rec": rec_loss(img, target),
            "lpips": perceptual_loss(self.stack, img, target)
                     if self.use_lpips else zero,
            "gan": gan_g_loss(self.disc(img)) if self.use_gan else zero,
        }
        f_other = out["f_global"][partners]
        z_other = self.renderer.adapter(out["z_drv"], f_other)
        parts["dist"] = dist_loss(out["z_drv"], out["zp_drv"], z_other)
        total = total_renderer_loss(parts, self.weights)

        self.renderer.zero_grad()
        total.backward()
        self.opt_g.step()
        self.step_count += 1
        row = {"step": self.step_count, "total": float(total.data), "d_loss": d_val}
        for k in ("rec", "lpips", "gan", "dist"):
            row[k] = float(parts[k].data)
        return row

    def run(self, dataset, n_steps):
        for _ in range(n_steps):
            yield self.step(self.sample_batch(dataset))

    def _state(self):
        modules = {"renderer": self.renderer}
        opts = {"opt_g": self.opt_g}
        if self.use_gan:
            modules["disc"] = self.disc
            opts["opt_d"] = self.opt_d
        return modules, opts

    def save(self, path):
        modules, opts = self._state()
        save_checkpoint(path, modules, opts, {
            "stage": "renderer", "step": self.step_count,
            "config_hash": self.config.config_hash(),
            "format": CHECKPOINT_FORMAT, "rng": self.rng.get_state()})

    def load(self, path):
        modules, opts = self._state()
        meta = load_checkpoint(path, modules, opts)
        self.step_count = int(meta["step"])
        self.rng.set_state(meta["rng"])
        return meta


class GeneratorTrainer:
    def __init__(self, config, motion_encoder=None, hidden=512, depth=4,
                 bottleneck=32, t_dim=256, latent_seed=0, cond_seed=0):
        self.config = config
        self.rng = RngState(config.train.seed)
        self.gen = MotionGenerator(config.scale.d_z,
                                   self.rng.stream("init", "generator"),
                                   hidden=hidden, depth=depth,
                                   bottleneck=bottleneck, t_dim=t_dim)
        t = config.train
        self.opt = Adam(self.gen.parameters(), lr=t.lr, beta1=t.beta1, beta2=t.beta2)
        self.motion_encoder = motion_encoder
        if motion_encoder is not None:
            motion_encoder.freeze()
        self.latent_seed = latent_seed
        self.cond_seed = cond_seed
        self.step_count = 0

    def prepare_sequences(self, dataset):
        """One (conditions, target latent sequence) pair per identity.

        Targets come from the frozen motion encoder when one is attached,
        otherwise from the deterministic parameter lift.
        """
        params = dataset["params"]
        n_id, n_fr = params.shape[:2]
        seqs = []
        for i in range(n_id):
            conds = data_mod.conditions_from_params(params[i], seed=self.cond_seed)
            if self.motion_encoder is None:
                z = data_mod.params_to_latent(params[i], self.config.scale.d_z,
                                              seed=self.latent_seed)
            else:
                with no_grad():
                    z = self.motion_encoder(Tensor(dataset["frames_lo"][i])).data
            seqs.append({"conds": conds, "z": np.asarray(z, dtype=np.float32)})
        return seqs

    def sample_batch(self, seqs):
        b = self.config.train.batch
        st = self.rng.stream("train", "batch")
        idx = st.integers(0, len(seqs), size=b)
        conds = {name: np.stack([seqs[i]["conds"][name] for i in idx])
                 for name, _ in MODALITY_DIMS}
        z1 = np.stack([seqs[i]["z"] for i in idx])
        return conds, z1

    def draw_dropout(self, n):
        st = self.rng.stream("train", "drop")
        p = self.config.train.drop_prob
        return {name: st.uniform(size=n) < p for name, _ in MODALITY_DIMS}

    def step(self, conds, z1):
        b = z1.shape[0]
        z0 = self.rng.stream("train", "noise").standard_normal(z1.shape)
        z0 = z0.astype(np.float32)
        t = self.rng.stream("train", "t").uniform(size=b).astype(np.float32)
        drops = self.draw_dropout(b)
        z_t, target = fm_training_point(z0, z1, t)
        v = self.gen.velocity(Tensor(z_t), conds, t, dropped=drops)
        loss = fm_loss(v, Tensor(target))
        self.gen.zero_grad()
        loss.backward()
        self.opt.step()
        self.step_count += 1
        return {"step": self.step_count, "loss": float(loss.data)}

    def run(self, seqs, n_steps):
        for _ in range(n_steps):
            conds, z1 = self.sample_batch(seqs)
            yield self.step(conds, z1)

    def save(self, path):
        save_checkpoint(path, {"generator": self.gen}, {"opt": self.opt}, {
            "stage": "generator", "step": self.step_count,
            "config_hash": self.config.config_hash(),
            "format": CHECKPOINT_FORMAT, "rng": self.rng.get_state()})

    def load(self, path):
        meta = load_checkpoint(path, {"generator": self.gen}, {"opt": self.opt})
        self.step_count = int(meta["step"])
        self.rng.set_state(meta["rng"])
        return meta


def train_adapter_toy(seed=0, steps=500, d_z=8, d_f=16, hidden=(32, 32),
                      batch=16, lr=1e-2, radius=1.0):
    """Train just the identity adapter on the distance loss plus a radius
    target, for two fixed identity vectors. The radius term keeps the
    equal-distance solution away from the trivial identity map.

    Returns (adapter, f_a, f_b).
    """
    rng = RngState(seed)
    adapter = IdentityAdapter(d_z, d_f, rng.stream("init", "adapter"), hidden=hidden)
    # the adapter initializes to the identity map, which pins every |z - za|
    # term at the kink of |.| where the subgradient is zero; in the full
    # renderer the reconstruction path supplies the escape gradient, here we
    # kick the head off the kink instead
    kick = rng.stream("toy", "kick")
    adapter.layers[-1].bias.data += (
        0.05 * kick.standard_normal(d_z).astype(np.float32))
    opt = Adam(adapter.parameters(), lr=lr, beta1=0.5, beta2=0.99)
    f_a = rng.stream("toy", "fa").standard_normal(d_f).astype(np.float32)
    f_b = rng.stream("toy", "fb").standard_normal(d_f).astype(np.float32)
    fa_t = Tensor(np.tile(f_a, (batch, 1)))
    fb_t = Tensor(np.tile(f_b, (batch, 1)))
    zs = rng.stream("toy", "z")
    from .numerics import functional as F
    for _ in range(steps):
        z = Tensor(zs.standard_normal((batch, d_z)).astype(np.float32))
        za = adapter(z, fa_t)
        zb = adapter(z, fb_t)
        da = F.absolute(z - za).sum(axis=-1)
        db = F.absolute(z - zb).sum(axis=-1)
        loss = (F.absolute(da - db).mean()
                + ((da - radius) * (da - radius)).mean()
                + ((db - radius) * (db - radius)).mean())
        adapter.zero_grad()
        loss.backward()
        opt.step()
    return adapter, f_a, f_b


def _cast_params(module, dtype):
    for p in module.parameters():
        p.data = p.data.astype(dtype)


def build_composed_cases(seed=0):
    """Whole-pipeline loss cases for the gradient checker.

    Each case is (name, build, input_arrays): build(*tensors) recomputes the
    scalar loss from the given input tensors through frozen f64 modules.
    """
    cases = []
    rng = RngState(seed)

    scale = ModelScale(input_res=16, base_channels=8, levels=2, d_z=4)
    renderer = Renderer(scale, rng.stream("gradcheck", "renderer"),
                        resample_k=4, window=4, adapt_hidden=(8, 8))
    disc = PatchDiscriminator(rng.stream("gradcheck", "disc"), base=4, levels=2)
    stack = FeatureStack(seed=seed, widths=(4, 8))
    for m in (renderer, disc, stack):
        _cast_params(m, np.float64)
    # the adapter is exactly identity at init, which parks the distance loss
    # on the |.| kink; nudge it off for a well-posed derivative
    last = renderer.adapter.layers[-1]
    last.bias.data += 0.05 * rng.stream("gradcheck", "nudge").standard_normal(
        last.bias.shape)
    weights = LossWeights()
    st = rng.stream("gradcheck", "inputs")
    src = st.uniform(-1, 1, size=(1, 3, 16, 16))
    drv = st.uniform(-1, 1, size=(1, 3, 16, 16))
    target = Tensor(st.uniform(-1, 1, size=(1, 3, 32, 32)))

    def renderer_build(src_t, drv_t):
        out = renderer(src_t, drv_img=drv_t)
        img = out["image"]
        f_other = renderer.enc_id(drv_t)[0]
        z_other = renderer.adapter(out["z_drv"], f_other)
        parts = {"rec": rec_loss(img, target),
                 "lpips": perceptual_loss(stack, img, target),
                 "gan": gan_g_loss(disc(img)),
                 "dist": dist_loss(out["z_drv"], out["zp_drv"], z_other)}
        return total_renderer_loss(parts, weights)

    cases.append(("renderer_composite", renderer_build, [src, drv]))

    gen = MotionGenerator(4, rng.stream("gradcheck", "gen"), hidden=16, depth=1,
                          bottleneck=8, t_dim=8)
    _cast_params(gen, np.float64)
    length = 3
    z0 = st.standard_normal((1, length, 4))
    z1 = st.standard_normal((1, length, 4))
    audio = st.standard_normal((1, length, 768)) * 0.5
    pose = st.standard_normal((1, length, 6)) * 0.5
    gaze = st.standard_normal((1, length, 2)) * 0.5

    def generator_build(z0_t, z1_t, a_t, p_t, g_t):
        z_t, tgt = fm_training_point(z0_t, z1_t, 0.37)
        v = gen.velocity(z_t, {"audio": a_t, "pose": p_t, "gaze": g_t}, 0.37)
        return fm_loss(v, tgt)

    cases.append(("generator_composite", generator_build, [z0, z1, audio, pose, gaze]))
    return cases


def _probe_check(build, arrays, probe_rng, eps=1e-5, n_probe=24):
    """Compare analytic input grads against central differences on a random
    subset of coordinates; returns the max relative error over probes."""
    tensors = [Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)
               for a in arrays]
    loss = build(*tensors)
    loss.backward()
    worst = 0.0
    for t in tensors:
        if t.grad is None:
            raise AssertionError("composed case left an input without a gradient")
        flat = t.data.reshape(-1)
        grad = t.grad.reshape(-1)
        k = min(n_probe, flat.size)
        coords = probe_rng.choice(flat.size, size=k, replace=False)
        num = np.empty(k, dtype=np.float64)
        with no_grad():
            for j, c in enumerate(coords):
                orig = flat[c]
                flat[c] = orig + eps
                up = float(build(*tensors).data)
                flat[c] = orig - eps
                down = float(build(*tensors).data)
                flat[c] = orig
                num[j] = (up - down) / (2.0 * eps)
        ana = grad[coords]
        scale = max(np.max(np.abs(ana)), np.max(np.abs(num))) + 1e-12
        worst = max(worst, float(np.max(np.abs(ana - num)) / scale))
    return worst


def grad_check_all(seed=0, eps=1e-5, tol=1e-4, include_composed=True, n_probe=24):
    """Per-op finite-difference suite plus composed-loss probes.

    Returns a list of {name, rel_err, ok} dicts covering every registered op
    case and, unless disabled, the end-to-end renderer and generator losses.
    """
    results = gradcheck.grad_check_all(seed=seed, eps=eps, tol=tol)
    if include_composed:
        probe_rng = np.random.default_rng(seed + 7)
        for name, build, arrays in build_composed_cases(seed):
            rel = _probe_check(build, arrays, probe_rng, eps=eps, n_probe=n_probe)
            results.append({"name": name, "rel_err": rel, "ok": bool(rel < tol)})
    return results
