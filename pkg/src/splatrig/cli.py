"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .density import AdcConfig
from .errors import DataError, DegenerateTriangle, DimensionMismatch, NonFiniteLoss

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _settings(args):
    from .renderer import RenderSettings

    return RenderSettings(deterministic=not getattr(args, "fast", False))


def _select_cameras(ds, spec):
    if spec in (None, "all"):
        return ds.cameras
    if spec == "held-out":
        return ds.held_out_cameras
    if spec == "train":
        return ds.train_cameras
    ids = spec.split(",")
    unknown = [i for i in ids if i not in {c.id for c in ds.cameras}]
    if unknown:
        raise UsageError(f"unknown camera id(s): {', '.join(unknown)}")
    return [ds.camera(i) for i in ids]


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args):
    from .synth import SynthSpec, synth_scene

    spec = SynthSpec(subdivisions=args.subdivisions, n_blend=args.blendshapes, n_cameras=args.cameras,
                     n_held_out=args.held_out, image_size=args.size, n_frames=args.frames,
                     n_test_frames=args.test_frames, splats_per_triangle=args.splats_per_triangle,
                     seed=args.seed)
    ds = synth_scene(spec, args.out, progress=None if args.quiet else print)
    print(f"wrote {len(ds.frames)} frames x {len(ds.cameras)} cameras to {args.out}")


def cmd_train(args):
    from .dataio import load_checkpoint, load_dataset, save_checkpoint
    from .density import AdcConfig
    from .losses import LossWeights
    from .splats import init_avatar
    from .trainer import OptimConfig, stdout_progress, train

    ds = load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.init:
        avatar, _ = load_checkpoint(args.init, ds.topology, load_optimizer=False)
    else:
        avatar = init_avatar(ds.topology, ds.rest_vertices)
    optim = OptimConfig(total_iters=args.iters, seed=args.seed, log_every=args.log_every,
                        checkpoint_every=args.checkpoint_every, finetune_rig=not args.no_rig_finetune)
    weights = LossWeights(lambda_position=args.lambda_position, eps_scaling=args.eps_scaling)
    adc = AdcConfig(grad_threshold=args.grad_threshold, enabled=not args.no_density)
    res = train(ds, avatar, optim, weights, adc, _settings(args), out_dir=out,
                progress=None if args.quiet else stdout_progress)
    config = {"optim": optim.to_dict(), "loss": vars(weights), "density": vars(adc),
              "deterministic": not args.fast}
    ckpt = save_checkpoint(out / "checkpoint.ply", res.avatar, ds.rest_vertices, optim.total_iters,
                           config, res.rig_params, res.optimizer)
    res.log.save(out / "runlog.json")
    print(f"wrote {ckpt} ({len(res.avatar.splats)} splats)")


def _load_model(args):
    from .dataio import load_checkpoint, load_dataset

    ds = load_dataset(args.dataset, load_images=False)
    avatar, meta = load_checkpoint(args.checkpoint, ds.topology, load_optimizer=False)
    return ds, avatar, meta


def _write_renders(out, avatar, ds, sequence, cameras, settings, names):
    from .dataio import write_png
    from .trainer import animate

    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    frames = animate(avatar, sequence, cameras, ds.rig, settings)
    for name, row in zip(names, frames):
        for cam, img in zip(cameras, row):
            write_png(out / "images" / f"{name}_{cam.id}.png", img)
    return len(frames) * len(cameras)


def cmd_render(args):
    ds, avatar, meta = _load_model(args)
    idx = [i for i, fr in enumerate(ds.frames) if fr.split == args.split]
    frames = [ds.frames[i] for i in idx]
    cams = _select_cameras(ds, args.cameras)
    tuned = meta.rig_params if args.split == "train" and not args.stored_params else None
    seq = []
    for i, fr in enumerate(frames):
        seq.append(ds.posed_vertices(fr, tuned[i] if tuned and i < len(tuned) else None))
    n = _write_renders(args.out, avatar, ds, seq, cams, _settings(args),
                       [f"{args.split}_{i:04d}" for i in idx])
    print(f"wrote {n} images to {args.out}")


def _foreign_sequence(path):
    """Rig parameters from another dataset's manifest or a JSON list of records."""
    from .dataio import load_dataset
    from .errors import IoError, SchemaError
    from .mesh_rig import RigParams

    path = Path(path)
    if path.is_dir() or path.name == "manifest.json":
        other = load_dataset(path, load_images=False)
        params = [f.params for f in other.frames if f.params is not None]
        if not params:
            raise SchemaError(f"{path}: no rig parameters to drive with")
        return params
    if not path.exists():
        raise IoError(f"missing parameter file: {path}")
    try:
        records = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if isinstance(records, dict):
        records = records.get("frames", [])
    return [RigParams.from_dict(r.get("rig_params", r)) for r in records]


def cmd_reenact(args):
    ds, avatar, _ = _load_model(args)
    if ds.rig is None:
        raise DimensionMismatch("dataset has no rig; reenactment needs rig parameters")
    seq = _foreign_sequence(args.params)
    for p in seq:
        if p.blend_weights.shape[0] != ds.rig.n_blend:
            raise DimensionMismatch(f"driving parameters have "
                                    f"{p.blend_weights.shape[0]} blend weights, rig expects {ds.rig.n_blend}")
    cams = _select_cameras(ds, args.cameras)
    n = _write_renders(args.out, avatar, ds, seq, cams, _settings(args),
                       [f"reenact_{i:04d}" for i in range(len(seq))])
    print(f"wrote {n} images to {args.out}")


def cmd_eval(args):
    from .dataio import load_dataset, read_png
    from .losses import psnr, ssim
    from .trainer import evaluate, summarize

    ds = load_dataset(args.dataset)
    cams = _select_cameras(ds, args.cameras)
    if args.renders:
        renders = Path(args.renders)
        rows = []
        for i, fr in enumerate(ds.frames):
            if fr.split != args.split:
                continue
            for cam in cams:
                if cam.id not in fr.images:
                    continue
                img = read_png(renders / "images" / f"{fr.split}_{i:04d}_{cam.id}.png")
                rows.append({"frame": fr.time, "camera": cam.id,
                             "psnr": psnr(img, fr.images[cam.id]), "ssim": ssim(img, fr.images[cam.id])})
    elif args.checkpoint:
        from .dataio import load_checkpoint

        avatar, meta = load_checkpoint(args.checkpoint, ds.topology, load_optimizer=False)
        tuned = meta.rig_params if args.split == "train" else None
        rows = evaluate(avatar, ds, args.split, cams, tuned, _settings(args))
    else:
        raise UsageError("eval needs --renders or --checkpoint")
    report = {"split": args.split, "cameras": [c.id for c in cams], "summary": summarize(rows),
              "images": rows}
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n")
    s = report["summary"]
    print(f"{s['n']} images  PSNR {s['psnr']:.3f} dB  SSIM {s['ssim']:.4f}")


def cmd_inspect(args):
    from .dataio import load_checkpoint, load_dataset, read_obj

    if args.topology:
        _, topo = read_obj(args.topology)
    else:
        topo = load_dataset(args.dataset, load_images=False).topology
    avatar, meta = load_checkpoint(args.checkpoint, topo, load_optimizer=False)
    sp = avatar.splats
    per_tri = avatar.per_triangle_count
    hist = np.bincount(per_tri)
    scale = sp.scale.max(axis=1)
    op = sp.opacity

    def dist(x):
        q = np.percentile(x, [0, 5, 50, 95, 100])
        return {"min": float(q[0]), "p5": float(q[1]), "median": float(q[2]), "p95": float(q[3]),
                "max": float(q[4]), "mean": float(np.mean(x))}

    info = {"splats": len(sp), "triangles": topo.triangle_count, "iteration": meta.iteration,
            "topology_hash": meta.topology_hash,
            "per_triangle_histogram": {int(k): int(v) for k, v in enumerate(hist) if v},
            "max_local_scale": dist(scale), "opacity": dist(op),
            "rig_frames": len(meta.rig_params or [])}
    if args.json:
        print(json.dumps(info, indent=1, sort_keys=True))
        return
    print(f"splats      {info['splats']} on {info['triangles']} triangles (iteration {meta.iteration})")
    print("per-triangle count histogram:")
    for k, v in info["per_triangle_histogram"].items():
        print(f"  {k:4d} splats: {v} triangles")
    for name in ("max_local_scale", "opacity"):
        d = info[name]
        print(f"{name:16s} min {d['min']:.4g}  p5 {d['p5']:.4g}  median {d['median']:.4g}  "
              f"p95 {d['p95']:.4g}  max {d['max']:.4g}")


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="splatrig", description="Mesh-rigged Gaussian splat avatars.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def render_flags(q):
        q.add_argument("--fast", action="store_true",
                       help="non-deterministic gradient reduction (default is deterministic)")
        q.add_argument("--deterministic", dest="fast", action="store_false")

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("out")
    s.add_argument("--subdivisions", type=int, default=3)
    s.add_argument("--blendshapes", type=int, default=4)
    s.add_argument("--cameras", type=int, default=8)
    s.add_argument("--held-out", type=int, default=1)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--frames", type=int, default=40)
    s.add_argument("--test-frames", type=int, default=8)
    s.add_argument("--splats-per-triangle", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="optimize an avatar on a dataset")
    t.add_argument("dataset")
    t.add_argument("out")
    t.add_argument("--iters", type=int, default=5000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--init", help="start from this checkpoint instead of one splat per triangle")
    t.add_argument("--log-every", type=int, default=100)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--lambda-position", type=float, default=0.01)
    t.add_argument("--eps-scaling", type=float, default=0.6)
    t.add_argument("--grad-threshold", type=float, default=AdcConfig.grad_threshold,
                   help="mean screen-space gradient (NDC) that triggers densification")
    t.add_argument("--no-density", action="store_true", help="disable adaptive density control")
    t.add_argument("--no-rig-finetune", action="store_true")
    t.add_argument("--quiet", action="store_true")
    render_flags(t)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render dataset frames from a checkpoint")
    r.add_argument("checkpoint")
    r.add_argument("dataset")
    r.add_argument("out")
    r.add_argument("--split", default="train")
    r.add_argument("--cameras", default="all", help="all, train, held-out or comma-separated ids")
    r.add_argument("--stored-params", action="store_true",
                   help="use the dataset's rig parameters instead of fine-tuned ones")
    render_flags(r)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("reenact", help="drive a checkpoint with a foreign parameter sequence")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("params", help="another dataset (directory or manifest) or a JSON list of rig params")
    e.add_argument("out")
    e.add_argument("--cameras", default="all")
    render_flags(e)
    e.set_defaults(func=cmd_reenact)

    v = sub.add_parser("eval", help="PSNR/SSIM against dataset images")
    v.add_argument("dataset")
    v.add_argument("--renders", help="directory written by 'render'")
    v.add_argument("--checkpoint", help="render this checkpoint and evaluate it")
    v.add_argument("--split", default="train")
    v.add_argument("--cameras", default="held-out")
    v.add_argument("--report", help="write a JSON report here")
    render_flags(v)
    v.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="print checkpoint statistics")
    i.add_argument("checkpoint")
    src = i.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset")
    src.add_argument("--topology", help="OBJ file with the avatar's topology")
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        extra = f" (diagnostics in {exc.dump_path})" if exc.dump_path else ""
        print(f"NonFiniteLoss: {exc}{extra}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DimensionMismatch, DegenerateTriangle) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
