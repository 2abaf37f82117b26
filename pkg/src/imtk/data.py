"""Procedural portrait dataset.

Each identity is a cartoon face (ellipse head, two eyes with movable pupils,
a mouth that opens) whose palette and geometry are drawn once per identity.
Each frame re-renders the same face under a 5-vector of motion parameters:

    [dx, dy, rot, mouth, eyes]

dx/dy translate the head (normalized units), rot rotates it about its center,
mouth in [0,1] opens the mouth, eyes in [-1,1] shifts the pupils sideways.
Frame 0 of every identity is the canonical pose (all zeros). Rendering is
analytic in normalized coordinates, so the same frame can be produced at any
resolution; training uses res for inputs and 2*res for reconstruction targets.

Pixel values live in [-1, 1].
"""

import json
import os

import numpy as np

from .numerics import MissingArtifactError, RngState, load_tensors, save_tensors

__all__ = ["PARAM_DIM", "sample_identity", "sample_motion_params",
           "render_frame", "make_dataset", "params_to_latent",
           "write_dataset", "load_dataset", "conditions_from_params"]

PARAM_DIM = 5


def sample_identity(rng_stream):
    """Draw palette and geometry for one identity from an open RNG stream."""
    u = rng_stream.uniform
    spec = {
        "bg": u(-0.9, -0.3, size=3),
        "skin": u(0.1, 0.9, size=3),
        "eye": u(-0.9, -0.2, size=3),
        "mouth": u(-0.9, 0.0, size=3),
        "head_rx": u(0.42, 0.55),
        "head_ry": u(0.55, 0.7),
        "eye_sep": u(0.18, 0.26),
        "eye_y": u(-0.22, -0.1),
        "eye_r": u(0.06, 0.1),
        "pupil_r_frac": u(0.35, 0.55),
        "mouth_y": u(0.25, 0.4),
        "mouth_rx": u(0.14, 0.24),
        "mouth_ry_base": u(0.02, 0.04),
        "mouth_ry_open": u(0.08, 0.14),
    }
    return {k: np.asarray(v, dtype=np.float64) for k, v in spec.items()}


def sample_motion_params(rng_stream, n_frames):
    """Motion parameter rows for one identity; frame 0 is all zeros."""
    p = np.zeros((n_frames, PARAM_DIM), dtype=np.float64)
    if n_frames > 1:
        p[1:, 0] = rng_stream.uniform(-0.15, 0.15, size=n_frames - 1)
        p[1:, 1] = rng_stream.uniform(-0.15, 0.15, size=n_frames - 1)
        p[1:, 2] = rng_stream.uniform(-0.3, 0.3, size=n_frames - 1)
        p[1:, 3] = rng_stream.uniform(0.0, 1.0, size=n_frames - 1)
        p[1:, 4] = rng_stream.uniform(-1.0, 1.0, size=n_frames - 1)
    return p


def _soft_ellipse(x, y, cx, cy, rx, ry, edge):
    # signed field < 1 inside; smooth step over a band of width `edge`
    d = ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2
    return np.clip((1.0 + edge - d) / (2.0 * edge), 0.0, 1.0)


def render_frame(identity, params, res):
    """Render one frame as float32 [3, res, res] in [-1, 1]."""
    dx, dy, rot, mouth, eyes = [float(v) for v in params]
    g = identity

    lin = (np.arange(res, dtype=np.float64) + 0.5) / res * 2.0 - 1.0
    ys, xs = np.meshgrid(lin, lin, indexing="ij")
    # head-local coordinates: undo translation, then rotation
    xt = xs - dx
    yt = ys - dy
    c, s = np.cos(rot), np.sin(rot)
    xl = c * xt + s * yt
    yl = -s * xt + c * yt

    edge = 3.0 / res  # anti-aliasing band scales with pixel size
    img = np.empty((3, res, res), dtype=np.float64)
    for ch in range(3):
        img[ch] = g["bg"][ch]

    def paint(mask, color):
        for ch in range(3):
            img[ch] = img[ch] * (1.0 - mask) + color[ch] * mask

    paint(_soft_ellipse(xl, yl, 0.0, 0.0, g["head_rx"], g["head_ry"], edge), g["skin"])

    white = np.array([0.85, 0.85, 0.85])
    pupil_r = g["eye_r"] * g["pupil_r_frac"]
    pupil_dx = eyes * (g["eye_r"] - pupil_r) * 0.9
    for side in (-1.0, 1.0):
        ex = side * g["eye_sep"]
        paint(_soft_ellipse(xl, yl, ex, g["eye_y"], g["eye_r"], g["eye_r"], edge), white)
        paint(_soft_ellipse(xl, yl, ex + pupil_dx, g["eye_y"], pupil_r, pupil_r, edge),
              g["eye"])

    mouth_ry = g["mouth_ry_base"] + mouth * g["mouth_ry_open"]
    paint(_soft_ellipse(xl, yl, 0.0, g["mouth_y"], g["mouth_rx"], mouth_ry, edge),
          g["mouth"])

    return np.clip(img, -1.0, 1.0).astype(np.float32)


def make_dataset(seed, n_identities, frames_per_identity, res):
    """Build the full dataset in memory.

    Returns a dict:
        frames_lo  [n_id, F, 3, res, res]      float32
        frames_hi  [n_id, F, 3, 2*res, 2*res]  float32
        params     [n_id, F, PARAM_DIM]        float32
    Same seed gives byte-identical output.
    """
    rng = RngState(seed)
    n, f = n_identities, frames_per_identity
    lo = np.empty((n, f, 3, res, res), dtype=np.float32)
    hi = np.empty((n, f, 3, 2 * res, 2 * res), dtype=np.float32)
    par = np.empty((n, f, PARAM_DIM), dtype=np.float32)
    for i in range(n):
        ident = sample_identity(rng.stream("data", "identity", str(i)))
        p = sample_motion_params(rng.stream("data", "motion", str(i)), f)
        par[i] = p.astype(np.float32)
        for j in range(f):
            lo[i, j] = render_frame(ident, p[j], res)
            hi[i, j] = render_frame(ident, p[j], 2 * res)
    return {"frames_lo": lo, "frames_hi": hi, "params": par}


def write_dataset(out_dir, seed, n_identities, frames_per_identity, res):
    """Generate and write a dataset: one tensor container per identity plus a
    manifest. Returns the number of images written (both resolutions)."""
    data = make_dataset(seed, n_identities, frames_per_identity, res)
    files = []
    for i in range(n_identities):
        name = "id%03d.imtk" % i
        save_tensors(os.path.join(out_dir, name), {
            "frames_lo": data["frames_lo"][i],
            "frames_hi": data["frames_hi"][i],
            "params": data["params"][i],
        })
        files.append(name)
    manifest = {"seed": seed, "n_identities": n_identities,
                "frames_per_identity": frames_per_identity, "res": res,
                "files": files}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return 2 * n_identities * frames_per_identity


def load_dataset(data_dir):
    """Load a written dataset back into the make_dataset dict layout."""
    manifest_path = os.path.join(data_dir, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise MissingArtifactError("no dataset manifest at %s" % manifest_path)
    with open(manifest_path) as f:
        manifest = json.load(f)
    lo, hi, par = [], [], []
    for name in manifest["files"]:
        entries = load_tensors(os.path.join(data_dir, name))
        lo.append(entries["frames_lo"])
        hi.append(entries["frames_hi"])
        par.append(entries["params"])
    return {"frames_lo": np.stack(lo), "frames_hi": np.stack(hi),
            "params": np.stack(par), "manifest": manifest}


def conditions_from_params(params, seed=0):
    """Derive driving condition streams from true motion params.

    The synthetic stand-ins keep the real modality shapes: audio [L,768]
    carries mouth openness along a fixed random direction, pose [L,6] carries
    the rigid parameters, gaze [L,2] the pupil offset. Together they determine
    the full parameter vector, so a conditional generator can in principle
    recover the motion exactly.
    """
    params = np.asarray(params, dtype=np.float32)
    length = params.shape[0]
    voice = RngState(seed).stream("data", "voice").standard_normal(768)
    voice = (voice / np.linalg.norm(voice)).astype(np.float32)
    audio = params[:, 3:4] * voice[None, :]
    pose = np.zeros((length, 6), dtype=np.float32)
    pose[:, :3] = params[:, :3]
    gaze = np.zeros((length, 2), dtype=np.float32)
    gaze[:, 0] = params[:, 4]
    return {"audio": audio, "pose": pose, "gaze": gaze}


def params_to_latent(params, d_z, seed=0):
    """Deterministic linear lift of motion params into a d_z latent.

    Used to train the motion generator directly against known motion when no
    learned motion encoder is wanted. The projection is a fixed seeded matrix,
    so the target latents are reproducible.
    """
    params = np.asarray(params, dtype=np.float32)
    proj = RngState(seed).stream("data", "param_lift").standard_normal(
        (params.shape[-1], d_z)).astype(np.float32)
    proj /= np.sqrt(params.shape[-1])
    return params @ proj
