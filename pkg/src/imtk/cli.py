"""Command line interface.

Subcommands: synth-data, train, infer, bench, grad-check, eval.

Exit codes: 0 success, 2 configuration error, 3 missing artifact, 4 shape
mismatch, 1 any other runtime failure. Seeds resolve as: explicit --seed
flag, else the IMTK_SEED environment variable, else the config value.

Heavy imports happen inside the handlers so --help stays instant and
--threads can pin BLAS pools before numpy loads.
"""

import argparse
import csv
import json
import os
import sys

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_SHAPE = 4


def _resolve_seed(flag_value, fallback):
    from .config import ConfigError
    if flag_value is not None:
        return int(flag_value)
    env = os.environ.get("IMTK_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError("IMTK_SEED must be an integer, got %r" % env)
    return fallback


def _load_config(path):
    from .config import RunConfig
    if path is None:
        return RunConfig()
    return RunConfig.from_file(path)


def cmd_synth_data(args):
    from .config import ConfigError
    from .data import write_dataset
    cfg = _load_config(args.config)
    seed = _resolve_seed(args.seed, cfg.train.seed)
    out = args.out
    if os.path.isdir(out) and os.listdir(out):
        raise ConfigError("--out %r already exists and is not empty" % out)
    if args.identities < 2:
        raise ConfigError("--identities must be >= 2")
    os.makedirs(out, exist_ok=True)
    n = write_dataset(out, seed, args.identities, args.frames, cfg.scale.input_res)
    print("wrote %d images (%d identities x %d frames, res %d and %d) to %s"
          % (n, args.identities, args.frames, cfg.scale.input_res,
             2 * cfg.scale.input_res, out))
    return EXIT_OK


def _append_csv(path, fieldnames, rows, fresh):
    mode = "w" if fresh else "a"
    with open(path, mode, newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        if fresh:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)


def cmd_train(args):
    from .data import load_dataset
    from .numerics import MissingArtifactError
    from .training import GeneratorTrainer, RendererTrainer

    cfg = _load_config(args.config)
    run_dir = cfg.require_path("run_dir")
    data_dir = cfg.require_path("data_dir")
    os.makedirs(run_dir, exist_ok=True)
    dataset = load_dataset(data_dir)
    steps = args.steps if args.steps is not None else cfg.train.steps

    if args.stage == "renderer":
        trainer = RendererTrainer(cfg)
        csv_path = os.path.join(run_dir, "loss_renderer.csv")
        fields = ["step", "rec", "lpips", "gan", "dist", "d_loss", "total"]
        fresh = True
        if args.resume:
            trainer.load(args.resume)
            fresh = not os.path.isfile(csv_path)
        final = os.path.join(run_dir, "renderer.imtk")
        rows = trainer.run(dataset, steps)
    else:
        renderer_ckpt = args.renderer_checkpoint or os.path.join(run_dir,
                                                                 "renderer.imtk")
        if not os.path.isfile(renderer_ckpt):
            raise MissingArtifactError(
                "generator training needs a renderer checkpoint; none at %s"
                % renderer_ckpt)
        host = RendererTrainer(cfg)
        host.load(renderer_ckpt)
        trainer = GeneratorTrainer(cfg, motion_encoder=host.renderer.enc_motion)
        csv_path = os.path.join(run_dir, "loss_generator.csv")
        fields = ["step", "loss"]
        fresh = True
        if args.resume:
            trainer.load(args.resume)
            fresh = not os.path.isfile(csv_path)
        final = os.path.join(run_dir, "generator.imtk")
        seqs = trainer.prepare_sequences(dataset)
        rows = trainer.run(seqs, steps)

    buffered = []
    for row in rows:
        buffered.append({k: row[k] for k in fields})
        if args.ckpt_every and row["step"] % args.ckpt_every == 0:
            trainer.save(os.path.join(
                run_dir, "%s_step%06d.imtk" % (args.stage, row["step"])))
        if len(buffered) >= 50:
            _append_csv(csv_path, fields, buffered, fresh)
            fresh = False
            buffered = []
    _append_csv(csv_path, fields, buffered, fresh)
    trainer.save(final)
    print("trained %s for %d steps (now at step %d); checkpoint %s, losses %s"
          % (args.stage, steps, trainer.step_count, final, csv_path))
    return EXIT_OK


def cmd_infer(args):
    import numpy as np
    from .config import ConfigError
    from .numerics import (MissingArtifactError, RngState, Tensor, load_tensors,
                           no_grad, save_tensors)
    from .renderer import Renderer
    from .synthesis import write_ppm
    from .training import load_checkpoint
    from .generator import MotionGenerator, validate_conditions

    cfg = _load_config(args.config)
    renderer = Renderer(cfg.scale, RngState(0).stream("init", "renderer"))
    load_checkpoint(args.checkpoint, {"renderer": renderer}, {})

    source = load_tensors(args.source)
    if "image" not in source:
        raise ConfigError("source container %r has no 'image' entry" % args.source)
    src = Tensor(source["image"][None].astype(np.float32))

    if args.mode == "video":
        if not args.driving:
            raise ConfigError("--driving is required for video mode")
        driving = load_tensors(args.driving)
        if "frames" not in driving:
            raise ConfigError("driving container has no 'frames' entry")
        frames = driving["frames"].astype(np.float32)
        outs = []
        with no_grad():
            for i in range(frames.shape[0]):
                out = renderer(src, drv_img=Tensor(frames[i][None]))
                outs.append(out["image"].data[0])
    else:
        if not args.conditions:
            raise ConfigError("--conditions is required for audio mode")
        if not args.gen_checkpoint:
            raise MissingArtifactError("audio mode needs --gen-checkpoint")
        conds = dict(load_tensors(args.conditions))
        validate_conditions(conds)
        gen = MotionGenerator(cfg.scale.d_z, RngState(0).stream("init", "generator"))
        load_checkpoint(args.gen_checkpoint, {"generator": gen}, {})
        steps = args.steps if args.steps is not None else cfg.sampler.steps
        guidance = args.guidance if args.guidance is not None else cfg.sampler.w
        seed = _resolve_seed(args.seed, cfg.sampler.seed)
        stream = RngState(seed).stream("sample")
        z_seq = gen.sample(conds, steps, guidance, stream)
        outs = []
        with no_grad():
            for i in range(z_seq.shape[0]):
                out = renderer(src, z_drv=Tensor(z_seq[i][None]))
                outs.append(out["image"].data[0])

    result = np.stack(outs)
    save_tensors(args.out, {"frames": result})
    if args.ppm_dir:
        os.makedirs(args.ppm_dir, exist_ok=True)
        for i in range(result.shape[0]):
            write_ppm(os.path.join(args.ppm_dir, "frame%04d.ppm" % i), result[i])
    print("rendered %d frames at %dx%d to %s"
          % (result.shape[0], result.shape[2], result.shape[3], args.out))
    return EXIT_OK


def _bench_case(kernel, n, k, seed):
    """Build (run, max_abs_diff, k_used) for one kernel at one size."""
    import numpy as np
    from .config import ModelScale
    from .numerics import RngState, Tensor, no_grad
    from .numerics import functional as F
    from .motion_transfer import guided_sparse_resample
    from .synthesis import WindowAttention
    from .renderer import Renderer
    from .config import ConfigError

    rng = RngState(seed).stream("bench", kernel, str(n))

    if kernel == "dense_attn":
        dim = 32
        q = Tensor(rng.standard_normal((1, n, dim)).astype(np.float32))
        kk = Tensor(rng.standard_normal((1, n, dim)).astype(np.float32))
        v = Tensor(rng.standard_normal((1, n, dim)).astype(np.float32))

        def run():
            with no_grad():
                F.scaled_dot_attention(q, kk, v)
        return run, 0.0, n

    if kernel == "sparse_resample":
        n_c = 256
        s2, s = n // n_c, int(round((n // n_c) ** 0.5))
        if n_c * s * s != n:
            raise ConfigError("sparse_resample sizes must be 256*s^2, got %d" % n)
        hf = 16 * s
        logits = rng.standard_normal((1, n_c, n_c)).astype(np.float32)
        a = F.softmax_rows(Tensor(logits)).data
        a_t = Tensor(a)
        v = Tensor(rng.standard_normal((1, 32, hf, hf)).astype(np.float32))
        with no_grad():
            sparse_full = guided_sparse_resample(a_t, v, n).data
            idx = np.repeat(np.repeat(
                a.reshape(1, n_c, 16, 16), s, axis=2), s, axis=3).reshape(1, n_c, n)
            dense = (idx / (s * s)) @ v.data.reshape(1, 32, n).transpose(0, 2, 1)
            dense_fine = np.repeat(dense.reshape(1, 16, 16, 32), s, axis=1)
            dense_fine = np.repeat(dense_fine, s, axis=2)
            dense_fine = dense_fine.reshape(1, n, 32).transpose(0, 2, 1)
            diff = float(np.max(np.abs(sparse_full.reshape(1, 32, n) - dense_fine)))
        k_used = min(k, n)

        def run():
            with no_grad():
                guided_sparse_resample(a_t, v, k_used)
        return run, diff, k_used

    if kernel == "window_attn":
        side = int(round(n ** 0.5))
        if side * side != n or side % 8:
            raise ConfigError("window_attn sizes must be (8m)^2, got %d" % n)
        attn = WindowAttention(16, 8, 4, rng)
        x = Tensor(rng.standard_normal((1, 16, side, side)).astype(np.float32))

        def run():
            with no_grad():
                attn(x)
        return run, 0.0, 64

    if kernel == "full_frame":
        side = int(round(n ** 0.5))
        if side * side != n:
            raise ConfigError("full_frame sizes must be squares, got %d" % n)
        levels = max(1, side.bit_length() - 3)  # bottleneck 4
        scale = ModelScale(input_res=side, base_channels=64, levels=levels, d_z=32)
        renderer = Renderer(scale, rng)
        src = Tensor(rng.uniform(-1, 1, size=(1, 3, side, side)).astype(np.float32))
        drv = Tensor(rng.uniform(-1, 1, size=(1, 3, side, side)).astype(np.float32))

        def run():
            with no_grad():
                renderer(src, drv_img=drv)
        return run, 0.0, 16

    from .config import ConfigError as CE
    raise CE("unknown bench kernel %r" % kernel)


def cmd_bench(args):
    import time
    import numpy as np
    from .config import ConfigError

    sizes = []
    for tok in args.sizes.split(","):
        tok = tok.strip()
        if tok:
            try:
                sizes.append(int(tok))
            except ValueError:
                raise ConfigError("--sizes must be comma-separated ints, got %r" % tok)
    if not sizes:
        raise ConfigError("--sizes is empty")
    seed = _resolve_seed(args.seed, 0)
    reps = max(args.reps, 20)

    rows = []
    for n in sizes:
        run, diff, k_used = _bench_case(args.kernel, n, args.k, seed)
        for _ in range(3):
            run()
        samples = []
        for _ in range(reps):
            t0 = time.perf_counter()
            run()
            samples.append((time.perf_counter() - t0) * 1e3)
        samples.sort()
        median = samples[len(samples) // 2]
        p90 = samples[min(len(samples) - 1, int(round(0.9 * (len(samples) - 1))))]
        rows.append({"kernel": args.kernel, "N": n, "k": k_used,
                     "median_ms": "%.6f" % median, "p90_ms": "%.6f" % p90,
                     "max_abs_diff": "%.3e" % diff})

    fields = ["kernel", "N", "k", "median_ms", "p90_ms", "max_abs_diff"]
    out = args.out
    with open(out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    for row in rows:
        print("%s N=%s k=%s median %sms p90 %sms diff %s"
              % (row["kernel"], row["N"], row["k"], row["median_ms"],
                 row["p90_ms"], row["max_abs_diff"]))
    print("wrote %s" % out)
    return EXIT_OK


def cmd_grad_check(args):
    from .training import grad_check_all
    results = grad_check_all(seed=args.seed if args.seed is not None else 0,
                             eps=args.eps, tol=args.tol,
                             include_composed=not args.ops_only)
    width = max(len(r["name"]) for r in results)
    ok = True
    for r in results:
        print("%-*s  %.3e  %s" % (width, r["name"], r["rel_err"],
                                  "pass" if r["ok"] else "FAIL"))
        ok = ok and r["ok"]
    print("%d/%d gradient cases pass" % (sum(r["ok"] for r in results), len(results)))
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_eval(args):
    import numpy as np
    from .metrics import psnr, ssim
    from .numerics import MissingArtifactError, ShapeError, load_tensors

    if not os.path.isdir(args.ref):
        raise MissingArtifactError("reference dir %r not found" % args.ref)
    if not os.path.isdir(args.pred):
        raise MissingArtifactError("prediction dir %r not found" % args.pred)
    names = sorted(f for f in os.listdir(args.ref) if f.endswith(".imtk"))
    if not names:
        raise MissingArtifactError("no .imtk files in %r" % args.ref)

    rows = []
    for name in names:
        pred_path = os.path.join(args.pred, name)
        if not os.path.isfile(pred_path):
            raise MissingArtifactError("missing prediction for %r" % name)
        ref_entries = load_tensors(os.path.join(args.ref, name))
        pred_entries = load_tensors(pred_path)
        psnrs, ssims = [], []
        for key, ref in ref_entries.items():
            if key not in pred_entries:
                raise MissingArtifactError("entry %r missing from %s" % (key, name))
            pred = pred_entries[key]
            if pred.shape != ref.shape:
                raise ShapeError("entry %r: shapes %s vs %s differ"
                                 % (key, ref.shape, pred.shape))
            frames = ref.reshape((-1,) + ref.shape[-3:]) if ref.ndim >= 3 else ref[None]
            pframes = pred.reshape(frames.shape)
            for a, b in zip(frames, pframes):
                a01 = (np.asarray(a, dtype=np.float64) + 1.0) / 2.0
                b01 = (np.asarray(b, dtype=np.float64) + 1.0) / 2.0
                psnrs.append(psnr(a01, b01))
                ssims.append(ssim(a01, b01))
        rows.append({"file": name, "psnr_db": "%.6f" % float(np.mean(psnrs)),
                     "ssim": "%.9f" % float(np.mean(ssims))})

    with open(args.out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["file", "psnr_db", "ssim"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    for row in rows:
        print("%s psnr %s ssim %s" % (row["file"], row["psnr_db"], row["ssim"]))
    print("wrote %s" % args.out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="imtk",
                                description="Desk-scale talking-face toolkit")
    p.add_argument("--threads", type=int, default=None,
                   help="pin BLAS thread pools before numpy loads")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth-data", help="generate the procedural dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--identities", type=int, default=4)
    sp.add_argument("--frames", type=int, default=8)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_synth_data)

    sp = sub.add_parser("train", help="train the renderer or the motion generator")
    sp.add_argument("--stage", choices=["renderer", "generator"], required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--resume", default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--ckpt-every", type=int, default=0)
    sp.add_argument("--renderer-checkpoint", default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="reenact a source portrait")
    sp.add_argument("--mode", choices=["video", "audio"], required=True)
    sp.add_argument("--source", required=True)
    sp.add_argument("--driving", default=None)
    sp.add_argument("--conditions", default=None)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--gen-checkpoint", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--guidance", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--ppm-dir", default=None)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("bench", help="micro-benchmark the attention kernels")
    sp.add_argument("--kernel", required=True,
                    choices=["dense_attn", "sparse_resample", "window_attn",
                             "full_frame"])
    sp.add_argument("--sizes", required=True,
                    help="comma-separated token/pixel counts")
    sp.add_argument("--out", required=True)
    sp.add_argument("--k", type=int, default=16)
    sp.add_argument("--reps", type=int, default=20)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("grad-check", help="finite-difference gradient audit")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.add_argument("--ops-only", action="store_true")
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("eval", help="psnr/ssim between two result directories")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .config import ConfigError
    from .numerics import MissingArtifactError, ShapeError
    try:
        return args.func(args)
    except ConfigError as e:
        print("config error: %s" % e, file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as e:
        print("missing artifact: %s" % e, file=sys.stderr)
        return EXIT_MISSING
    except ShapeError as e:
        print("shape mismatch: %s" % e, file=sys.stderr)
        return EXIT_SHAPE
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print("error: %s: %s" % (type(e).__name__, e), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
