"""Flow-matching motion generator.

A transformer predicts the straight-line velocity field that carries Gaussian
noise to motion-latent sequences, conditioned on per-frame audio, head pose
and gaze. Each modality has a learned null token substituted before
projection, both for classifier-free guidance and for modality dropout during
training; the unconditional branch nulls the audio stream only, since pose
and gaze are cheap to supply at inference. The timestep is embedded with the
conditions and is never nulled.
"""

import numpy as np

from .numerics import Module, ModuleList, Parameter, Linear, LayerNorm, Tensor, \
    ShapeError, no_grad
from .numerics import functional as F

__all__ = ["MODALITY_DIMS", "validate_conditions", "fm_training_point", "fm_loss",
           "cfg_combine", "euler_integrate", "ConditionEmbedder", "DiTBlock",
           "MotionGenerator"]

MODALITY_DIMS = (("audio", 768), ("pose", 6), ("gaze", 2))


def validate_conditions(conds):
    """Check a {audio, pose, gaze} dict of [L,d] or [B,L,d] arrays; return L."""
    length = None
    batched = None
    for name, d in MODALITY_DIMS:
        if name not in conds:
            raise ShapeError("conditions missing %r" % name)
        x = conds[name]
        if x.ndim not in (2, 3) or x.shape[-1] != d:
            raise ShapeError("%s must be [L,%d] or [B,L,%d], got %s"
                             % (name, d, d, (x.shape,)))
        is_b = x.ndim == 3
        l = x.shape[-2]
        if length is None:
            length, batched = l, is_b
        elif l != length or is_b != batched:
            raise ShapeError("condition streams disagree on shape")
    return length


def sinusoidal_features(t, dim):
    """Classic sinusoidal features of a scalar in [0,1] (or a batch of them)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)) * 1000.0
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.cos(ang), np.sin(ang)], axis=1).astype(np.float32)


def positional_table(length, dim):
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    ang = pos / np.power(10000.0, 2.0 * (i // 2) / dim)
    table = np.where(i % 2 == 0, np.sin(ang), np.cos(ang))
    return table.astype(np.float32)


def fm_training_point(z0, z1, t):
    """Linear interpolation point and its target velocity.

    z_t = (1-t) z0 + t z1, target = z1 - z0. t may be a scalar or [B].
    """
    t = np.asarray(t, dtype=np.float32)
    if t.ndim == 1:
        t = t.reshape(-1, *([1] * (z0.ndim - 1)))
    z_t = z0 * (1.0 - t) + z1 * t
    return z_t, z1 - z0


def fm_loss(v_pred, target):
    diff = v_pred - target
    return (diff * diff).mean()


def cfg_combine(v_cond, v_uncond, w):
    """Guided field v_u + w (v_c - v_u); w=1 and w=0 return a branch untouched."""
    if w == 1.0:
        return v_cond
    if w == 0.0:
        return v_uncond
    return v_uncond + w * (v_cond - v_uncond)


def euler_integrate(field, z0, steps):
    """Fixed-step Euler from t=0 to t=1; field(z, t) -> velocity array.

    The state accumulates in float64 regardless of input dtype (a float32
    running sum loses ~1e-6 over 100 steps just from 1/steps rounding); the
    field still sees the caller's dtype and the result is returned in it.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    z0 = np.asarray(z0)
    acc = z0.astype(np.float64)
    for i in range(steps):
        t = i / steps
        v = np.asarray(field(acc.astype(z0.dtype), t), dtype=np.float64)
        acc = acc + v / steps
    return acc.astype(z0.dtype)


def _norm_dropped(dropped, batch):
    """Normalize dropout spec to {name: float32 [B,1,1] mask} (1 = dropped)."""
    masks = {}
    if not dropped:
        return masks
    if isinstance(dropped, dict):
        items = dropped.items()
    else:
        items = ((name, True) for name in dropped)
    for name, flag in items:
        arr = np.asarray(flag)
        if arr.ndim == 0:
            arr = np.full(batch, bool(arr))
        masks[name] = arr.astype(np.float32).reshape(batch, 1, 1)
    return masks


class ConditionEmbedder(Module):
    """Fuse per-frame conditions and the timestep into one stream.

    Each modality: null substitution (before any projection), then
    Linear -> LayerNorm -> SiLU into a shared small width, then a linear up to
    the model width. Streams are summed; the timestep joins through a
    sinusoidal MLP broadcast over frames.
    """

    def __init__(self, rng, hidden=512, bottleneck=32, t_dim=256):
        super().__init__()
        self.t_dim = t_dim
        for name, d in MODALITY_DIMS:
            setattr(self, "null_" + name, Parameter(np.zeros(d, dtype=np.float32)))
            setattr(self, "in_" + name, Linear(d, bottleneck, rng))
            setattr(self, "ln_" + name, LayerNorm(bottleneck))
            setattr(self, "up_" + name, Linear(bottleneck, hidden, rng))
        self.t_fc1 = Linear(t_dim, hidden, rng)
        self.t_fc2 = Linear(hidden, hidden, rng)

    def forward(self, conds, t, dropped=None):
        first = conds[MODALITY_DIMS[0][0]]
        b = first.shape[0]
        masks = _norm_dropped(dropped, b)
        h = None
        for name, d in MODALITY_DIMS:
            x = conds[name]
            if not isinstance(x, Tensor):
                x = Tensor(np.asarray(x, dtype=np.float32))
            if x.ndim != 3 or x.shape[-1] != d:
                raise ShapeError("embedder wants batched [B,L,%d] %s, got %s"
                                 % (d, name, (x.shape,)))
            null = getattr(self, "null_" + name)
            if name in masks:
                m = Tensor(masks[name])
                x = x * (1.0 - m) + null.reshape(1, 1, d) * m
            e = getattr(self, "in_" + name)(x)
            e = F.silu(getattr(self, "ln_" + name)(e))
            e = getattr(self, "up_" + name)(e)
            h = e if h is None else h + e
        tfeat = Tensor(sinusoidal_features(t, self.t_dim))
        te = self.t_fc2(F.silu(self.t_fc1(tfeat)))
        if te.shape[0] == 1 and b > 1:
            te = te + Tensor(np.zeros((b, 1), dtype=np.float32))
        return h + te.reshape(b, 1, te.shape[-1])


def _adaln(x, mod):
    dim = x.shape[-1]
    gamma = mod[..., :dim]
    beta = mod[..., dim:]
    return F.layer_norm(x) * (gamma + 1.0) + beta


class DiTBlock(Module):
    """Pre-norm transformer block with adaptive LayerNorm conditioning.

    The scale/shift predictors start at zero, so at init each AdaLN is a
    plain LayerNorm regardless of the conditioning stream.
    """

    def __init__(self, dim, rng, mlp_ratio=4):
        super().__init__()
        self.mod1 = Linear(dim, 2 * dim, rng, zero_init=True)
        self.mod2 = Linear(dim, 2 * dim, rng, zero_init=True)
        self.to_q = Linear(dim, dim, rng)
        self.to_k = Linear(dim, dim, rng)
        self.to_v = Linear(dim, dim, rng)
        self.to_out = Linear(dim, dim, rng)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng)
        self.fc2 = Linear(mlp_ratio * dim, dim, rng)

    def forward(self, h, c):
        a = _adaln(h, self.mod1(c))
        att, _ = F.scaled_dot_attention(self.to_q(a), self.to_k(a), self.to_v(a))
        h = h + self.to_out(att)
        a = _adaln(h, self.mod2(c))
        return h + self.fc2(F.silu(self.fc1(a)))


class MotionGenerator(Module):
    def __init__(self, d_z, rng, hidden=512, depth=4, mlp_ratio=4,
                 bottleneck=32, t_dim=256):
        super().__init__()
        self.d_z = d_z
        self.hidden = hidden
        self.embedder = ConditionEmbedder(rng, hidden=hidden, bottleneck=bottleneck,
                                          t_dim=t_dim)
        self.embed_in = Linear(d_z, hidden, rng)
        self.blocks = ModuleList()
        for _ in range(depth):
            self.blocks.append(DiTBlock(hidden, rng, mlp_ratio=mlp_ratio))
        self.mod_out = Linear(hidden, 2 * hidden, rng, zero_init=True)
        self.head = Linear(hidden, d_z, rng, zero_init=True)

    def embed_conditions(self, conds, t, dropped=None):
        return self.embedder(conds, t, dropped=dropped)

    def dit_forward(self, z_t, cond_embed):
        h = self.embed_in(z_t)
        h = h + Tensor(positional_table(h.shape[-2], self.hidden).reshape(
            1, h.shape[-2], self.hidden))
        for blk in self.blocks:
            h = blk(h, cond_embed)
        return self.head(_adaln(h, self.mod_out(cond_embed)))

    def velocity(self, z_t, conds, t, dropped=None):
        return self.dit_forward(z_t, self.embed_conditions(conds, t, dropped=dropped))

    def sample(self, conds, steps, w, rng_stream, length=None):
        """Draw one motion sequence [L, d_z] by Euler integration with CFG."""
        if length is None:
            length = validate_conditions(conds)
        batched = {k: np.asarray(v, dtype=np.float32)[None] if np.asarray(v).ndim == 2
                   else np.asarray(v, dtype=np.float32) for k, v in conds.items()}
        z0 = rng_stream.standard_normal((1, length, self.d_z)).astype(np.float32)

        def field(z, t):
            with no_grad():
                zt = Tensor(z)
                if w == 1.0:
                    return self.velocity(zt, batched, t).data
                if w == 0.0:
                    return self.velocity(zt, batched, t, dropped={"audio"}).data
                v_c = self.velocity(zt, batched, t).data
                v_u = self.velocity(zt, batched, t, dropped={"audio"}).data
                return cfg_combine(v_c, v_u, w)

        return euler_integrate(field, z0, steps)[0]
