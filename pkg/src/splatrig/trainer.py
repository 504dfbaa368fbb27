"""Optimization loop, run log and inference-time animation."""
from __future__ import annotations

import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .density import AdcConfig, DensifyStats, densify, prune, reset_opacity
from .errors import DimensionMismatch, NonFiniteLoss
from .losses import LossWeights, psnr, ssim
from .mesh_rig import BlendshapeRig, RigParams, pose
from .optim import AdamState, adam_step
from .pipeline import loss_and_grads, world_splats
from .renderer import RenderSettings, render
from .splats import RiggedAvatar

SPLAT_GROUPS = ("mu_local", "log_scale", "rot_local", "opacity_logit", "sh_dc", "sh_rest")
RIG_GROUPS = ("translation", "rotation", "blend_weights")


@dataclass
class OptimConfig:
    lr_position: float = 5e-3
    lr_scaling: float = 1.7e-2
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_sh_dc: float = 2.5e-3
    lr_sh_rest: float = 2.5e-3 / 20
    lr_rig_translation: float = 1e-6
    lr_rig_rotation: float = 1e-5
    lr_rig_weights: float = 1e-3
    total_iters: int = 5000
    position_lr_final: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-15
    seed: int = 0
    sh_warmup: bool = True
    finetune_rig: bool = True
    log_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self):
        rates = [getattr(self, f.name) for f in dataclasses.fields(self) if f.name.startswith("lr_")]
        if any(r < 0 for r in rates):
            raise ValueError("learning rates must be non-negative")
        if not 0 < self.position_lr_final < 1:
            raise ValueError("position_lr_final must lie in (0, 1)")
        if self.total_iters < 0:
            raise ValueError("total_iters must be non-negative")

    def position_lr(self, it):
        """Exponential decay from ``lr_position`` to ``position_lr_final`` times it."""
        t = min(it / max(self.total_iters, 1), 1.0)
        return self.lr_position * self.position_lr_final ** t

    def sh_degree(self, it, max_degree=3):
        if not self.sh_warmup:
            return max_degree
        step = max(1, self.total_iters // 60)
        return min(max_degree, it // step)

    def splat_lr(self, group, it):
        return {"mu_local": self.position_lr(it), "log_scale": self.lr_scaling,
                "rot_local": self.lr_rotation, "opacity_logit": self.lr_opacity,
                "sh_dc": self.lr_sh_dc, "sh_rest": self.lr_sh_rest}[group]

    def rig_lr(self, group):
        return {"translation": self.lr_rig_translation, "rotation": self.lr_rig_rotation,
                "blend_weights": self.lr_rig_weights}[group]

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class RunLog:
    """Append-only per-iteration record of the optimization."""

    iteration: list = field(default_factory=list)
    frame: list = field(default_factory=list)
    camera: list = field(default_factory=list)
    total: list = field(default_factory=list)
    l1: list = field(default_factory=list)
    dssim: list = field(default_factory=list)
    position: list = field(default_factory=list)
    scaling: list = field(default_factory=list)
    n_splats: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def append(self, it, frame, cam, loss, n_splats, wall):
        self.iteration.append(int(it))
        self.frame.append(int(frame))
        self.camera.append(str(cam))
        self.total.append(float(loss.total))
        self.l1.append(float(loss.l1))
        self.dssim.append(float(loss.dssim))
        self.position.append(float(loss.position))
        self.scaling.append(float(loss.scaling))
        self.n_splats.append(int(n_splats))
        self.wall_time.append(float(wall))

    def event(self, it, kind, before, after):
        self.events.append({"iteration": int(it), "kind": kind, "before": int(before), "after": int(after)})

    def __len__(self):
        return len(self.iteration)

    def to_dict(self, timing=True):
        d = dataclasses.asdict(self)
        if not timing:
            d.pop("wall_time")
        return d

    def to_json(self, timing=True):
        return json.dumps(self.to_dict(timing), sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class TrainResult:
    avatar: RiggedAvatar
    log: RunLog
    rig_params: list | None
    optimizer: dict


def _splat_view(sp, group):
    if group == "sh_dc":
        return sp.sh[:, :1]
    if group == "sh_rest":
        return sp.sh[:, 1:]
    return getattr(sp, group)


def _splat_states(sp):
    return {g: AdamState.zeros_like(_splat_view(sp, g)) for g in SPLAT_GROUPS}


def _flatten_states(states, rig_states):
    out = {}
    for g, st in states.items():
        out[f"{g}.m"], out[f"{g}.v"], out[f"{g}.step"] = st.m, st.v, np.int64(st.step)
    for j, frame_states in enumerate(rig_states or []):
        for g, st in frame_states.items():
            out[f"rig{j}.{g}.m"], out[f"rig{j}.{g}.v"] = st.m, st.v
            out[f"rig{j}.{g}.step"] = np.int64(st.step)
    return out


def _check_finite(it, res, frame_idx, cam_id, avatar, dump_dir):
    bad = not np.isfinite(res.loss.total)
    g = res.splat_grads
    for arr in (g.mu_local, g.rot_local, g.log_scale, g.opacity_logit, g.sh):
        bad = bad or not np.all(np.isfinite(arr))
    if res.rig_grads is not None:
        for arr in (res.rig_grads.translation, res.rig_grads.rotation, res.rig_grads.blend_weights):
            bad = bad or not np.all(np.isfinite(arr))
    if not bad:
        return
    dump = None
    if dump_dir is not None:
        dump = Path(dump_dir) / f"nonfinite_{it:07d}.npz"
        sp = avatar.splats
        np.savez(dump, iteration=it, frame=frame_idx, camera=cam_id, loss=res.loss.total,
                 mu_local=sp.mu_local, rot_local=sp.rot_local, log_scale=sp.log_scale,
                 opacity_logit=sp.opacity_logit, sh=sp.sh, parent=sp.parent,
                 grad_mu_local=g.mu_local, grad_log_scale=g.log_scale, grad_sh=g.sh)
    raise NonFiniteLoss(f"non-finite loss or gradient at iteration {it} "
                        f"(frame {frame_idx}, camera {cam_id})", dump_path=dump)


def train(dataset, avatar: RiggedAvatar, optim: OptimConfig = OptimConfig(),
          weights: LossWeights = LossWeights(), adc: AdcConfig = AdcConfig(),
          settings: RenderSettings = RenderSettings(), *, out_dir=None, scale_schedule=True,
          progress=None) -> TrainResult:
    """Optimize ``avatar`` in place against the training split of ``dataset``.

    Parameters
    ----------
    dataset : Dataset
        Training frames are those with split ``"train"``; held-out cameras are
        never sampled.
    avatar : RiggedAvatar
        Initialized avatar; mutated in place and also returned.
    adc : AdcConfig
        Density-control constants at the reference 600k-iteration budget; they
        are rescaled to ``optim.total_iters`` unless ``scale_schedule`` is off.
    out_dir : path, optional
        Receives periodic checkpoints and any non-finite diagnostic dump.
    progress : callable, optional
        Called with one status line per logging interval.
    """
    from .dataio import save_checkpoint

    rng = np.random.default_rng(optim.seed)
    frames = dataset.split("train")
    cams = dataset.train_cameras
    if not frames or not cams:
        raise ValueError("dataset has no training frames or cameras")
    rig = dataset.rig if isinstance(dataset.rig, BlendshapeRig) else None
    use_rig = rig is not None and all(f.params is not None for f in frames)
    rig_params = [f.params.copy() for f in frames] if use_rig else None
    fixed_vertices = None if use_rig else [dataset.posed_vertices(f) for f in frames]
    finetune = use_rig and optim.finetune_rig
    rig_states = ([{g: AdamState.zeros_like(getattr(p, g)) for g in RIG_GROUPS} for p in rig_params]
                  if finetune else None)

    sched = adc.scaled(optim.total_iters) if scale_schedule else adc
    states = _splat_states(avatar.splats)
    stats = DensifyStats(len(avatar.splats))
    log = RunLog()
    n_iter = optim.total_iters
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    for it in range(1, n_iter + 1):
        t0 = time.perf_counter()
        fi = int(rng.integers(len(frames)))
        cam = cams[int(rng.integers(len(cams)))]
        target = frames[fi].images[cam.id]
        st = dataclasses.replace(settings, sh_degree=min(settings.sh_degree, optim.sh_degree(it - 1)))
        if use_rig:
            res = loss_and_grads(avatar, cam, target, rig=rig, params=rig_params[fi], weights=weights,
                                 settings=st, want_vertex_grads=finetune)
        else:
            res = loss_and_grads(avatar, cam, target, vertices=fixed_vertices[fi], weights=weights,
                                 settings=st, want_vertex_grads=False)
        _check_finite(it, res, fi, cam.id, avatar, out_dir)

        sp = avatar.splats
        g = res.splat_grads
        grads = {"mu_local": g.mu_local, "log_scale": g.log_scale, "rot_local": g.rot_local,
                 "opacity_logit": g.opacity_logit, "sh_dc": g.sh[:, :1], "sh_rest": g.sh[:, 1:]}
        for group in SPLAT_GROUPS:
            adam_step(_splat_view(sp, group), grads[group], states[group],
                      optim.splat_lr(group, it - 1), optim.betas, optim.eps)
        if finetune:
            for group in RIG_GROUPS:
                adam_step(getattr(rig_params[fi], group), getattr(res.rig_grads, group),
                          rig_states[fi][group], optim.rig_lr(group), optim.betas, optim.eps)

        if sched.enabled:
            stats.add(res.output.mean2d_grad, res.output.visible, cam.width, cam.height)
            if it > sched.start and it % sched.interval == 0 and it < n_iter:
                before = len(avatar.splats)
                source, fresh = densify(avatar, stats, sched, rng)
                states = {k: s.take(source, fresh) for k, s in states.items()}
                mid = len(avatar.splats)
                log.event(it, "densify", before, mid)
                keep = prune(avatar, sched)
                states = {k: s.take(keep) for k, s in states.items()}
                log.event(it, "prune", mid, len(avatar.splats))
                stats = DensifyStats(len(avatar.splats))
            if it % sched.reset_interval == 0 and it < n_iter:
                reset_opacity(avatar, sched)
                log.event(it, "reset", len(avatar.splats), len(avatar.splats))

        res.output.release()
        log.append(it, fi, cam.id, res.loss, len(avatar.splats), time.perf_counter() - t0)
        if progress is not None and optim.log_every and (it % optim.log_every == 0 or it == n_iter):
            progress(f"iter {it:6d}/{n_iter}  loss {res.loss.total:.5f}  l1 {res.loss.l1:.5f}  "
                     f"splats {len(avatar.splats)}  {1000 * log.wall_time[-1]:.1f} ms")
        if out_dir is not None and optim.checkpoint_every and it % optim.checkpoint_every == 0:
            save_checkpoint(Path(out_dir) / f"checkpoint_{it:07d}.ply", avatar, dataset.rest_vertices,
                            it, optim.to_dict(), rig_params, _flatten_states(states, rig_states))

    return TrainResult(avatar, log, rig_params, _flatten_states(states, rig_states))


def stdout_progress(line):
    print(line, file=sys.stdout, flush=True)


def animate(avatar: RiggedAvatar, sequence, cameras, rig: BlendshapeRig | None = None,
            settings: RenderSettings = RenderSettings()):
    """Render every time step of ``sequence`` from every camera.

    ``sequence`` holds either ``RigParams`` (requires ``rig``) or posed vertex
    arrays.  Returns a nested list ``images[t][c]``.
    """
    out = []
    for item in sequence:
        if isinstance(item, RigParams):
            if rig is None:
                raise DimensionMismatch("rig parameters given but no rig to pose them with")
            verts = pose(rig, item)
        else:
            verts = np.asarray(item, dtype=np.float64)
        glob, _ = world_splats(avatar, verts)
        row = []
        for cam in cameras:
            o = render(glob, cam, settings)
            o.release()
            row.append(o.image)
        out.append(row)
    return out


def evaluate(avatar: RiggedAvatar, dataset, split="train", cameras=None, rig_params=None,
             settings: RenderSettings = RenderSettings()):
    """PSNR and SSIM of renders against the dataset images.

    ``cameras`` defaults to the held-out cameras; ``rig_params`` optionally
    replaces the stored parameters of the frames in ``split`` (e.g. the
    fine-tuned ones returned by :func:`train`).  Returns one dict per image.
    """
    from .dataio import read_png

    cams = dataset.held_out_cameras if cameras is None else cameras
    rows = []
    for i, fr in enumerate(dataset.split(split)):
        params = rig_params[i] if rig_params is not None else None
        glob, _ = world_splats(avatar, dataset.posed_vertices(fr, params))
        for cam in cams:
            if cam.id not in fr.images:
                continue
            target = fr.images[cam.id]
            if not isinstance(target, np.ndarray):
                target = read_png(target)
            img = render(glob, cam, settings).image
            rows.append({"frame": fr.time, "camera": cam.id,
                         "psnr": psnr(img, target), "ssim": ssim(img, target)})
    return rows


def summarize(rows):
    """Mean PSNR and SSIM over evaluation rows."""
    if not rows:
        return {"psnr": float("nan"), "ssim": float("nan"), "n": 0}
    return {"psnr": float(np.mean([r["psnr"] for r in rows])),
            "ssim": float(np.mean([r["ssim"] for r in rows])), "n": len(rows)}
