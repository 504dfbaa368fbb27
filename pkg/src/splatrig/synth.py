"""Synthetic head-like scenes with a known, representable optimum.

An ellipsoidal icosphere is driven by a small blendshape rig plus a rigid
head motion per frame.  Ground-truth splats are painted onto its triangles
and rendered with the reference renderer from a ring of cameras.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataio import (Dataset, Frame, image_path, load_dataset, save_checkpoint, save_dataset,
                     write_png)
from .errors import IoError
from .geometry import axis_angle_to_quat
from .mesh_rig import BlendshapeRig, RigParams, icosphere, pose
from .pipeline import world_splats
from .renderer import Camera, RenderSettings
from .renderer.reference import render_reference
from .renderer.sh import C0
from .splats import BoundGaussians, RiggedAvatar, logit


@dataclass
class SynthSpec:
    subdivisions: int = 3
    n_blend: int = 4
    n_cameras: int = 8
    n_held_out: int = 1
    image_size: int = 128
    n_frames: int = 40
    n_test_frames: int = 8
    splats_per_triangle: int = 3
    seed: int = 0
    radii: tuple = (0.085, 0.11, 0.095)
    camera_distance: float = 0.5
    focal_ratio: float = 1.4
    blend_amplitude: float = 0.012
    max_rotation: float = 0.15
    max_translation: float = 0.005
    color_noise: float = 0.06
    sh_rest_noise: float = 0.02

    def __post_init__(self):
        if self.n_cameras < 1 or self.n_frames < 1 or self.image_size < 1:
            raise ValueError("need at least one camera, frame and pixel")
        self.radii = tuple(float(r) for r in self.radii)

    def to_dict(self):
        d = asdict(self)
        d["radii"] = list(self.radii)
        return d


def head_rig(spec: SynthSpec, rng):
    unit, topo = icosphere(spec.subdivisions)
    neutral = unit * np.array(spec.radii)
    basis = np.zeros((spec.n_blend,) + neutral.shape)
    for i in range(spec.n_blend):
        center = rng.standard_normal(3)
        center /= np.linalg.norm(center)
        bump = np.exp(-np.sum((unit - center) ** 2, axis=1) / (2 * 0.35 ** 2))
        basis[i] = spec.blend_amplitude * bump[:, None] * unit
    return BlendshapeRig(neutral, basis), topo


def random_params(spec: SynthSpec, rng, weight_range=1.0):
    axis = rng.standard_normal(3)
    angle = rng.uniform(0, spec.max_rotation)
    return RigParams(rng.normal(0, spec.max_translation, 3), axis_angle_to_quat(axis, angle),
                     rng.uniform(-weight_range, weight_range, spec.n_blend))


def camera_ring(spec: SynthSpec):
    """Training cameras on a ring around the vertical axis, then held-out ones
    placed halfway between neighbours and slightly higher."""
    size = spec.image_size
    f = spec.focal_ratio * size
    d = spec.camera_distance
    cams = []
    for k in range(spec.n_cameras):
        th = 2 * np.pi * k / spec.n_cameras
        elev = 0.05 * d * (1 if k % 2 else -1)
        cams.append(Camera.look_at([d * np.sin(th), elev, d * np.cos(th)], [0, 0, 0], [0, 1, 0],
                                   size, size, f, id=f"cam{k:02d}"))
    held = []
    for k in range(spec.n_held_out):
        th = 2 * np.pi * (k * max(1, spec.n_cameras // max(spec.n_held_out, 1)) + 0.5) / spec.n_cameras
        cams.append(Camera.look_at([d * np.sin(th), 0.1 * d, d * np.cos(th)], [0, 0, 0], [0, 1, 0],
                                   size, size, f, id=f"held{k:02d}"))
        held.append(cams[-1].id)
    return cams, tuple(held)


def _color_field(dirs, rng, n_waves=6):
    base = np.array([0.78, 0.58, 0.48])
    freq = rng.normal(0, 4.0, (n_waves, 3))
    phase = rng.uniform(0, 2 * np.pi, n_waves)
    amp = rng.uniform(0.05, 0.12, (n_waves, 3))
    waves = np.sin(dirs @ freq.T + phase)
    return base + waves @ amp


def ground_truth_splats(spec: SynthSpec, rig: BlendshapeRig, topo, rng) -> RiggedAvatar:
    """Several flat splats per triangle near its centroid with a smooth colour field."""
    m = spec.splats_per_triangle
    n_tri = topo.triangle_count
    n = n_tri * m
    parent = np.repeat(np.arange(n_tri), m)
    mu = np.stack([rng.uniform(-0.35, 0.35, n), rng.normal(0, 0.02, n),
                   rng.uniform(-0.35, 0.35, n)], axis=1)
    if m == 1:
        mu[:, [0, 2]] *= 0.3
    log_scale = np.log(np.stack([rng.uniform(0.3, 0.5, n), np.full(n, 0.08),
                                 rng.uniform(0.3, 0.5, n)], axis=1))
    ang = rng.uniform(0, np.pi, n)
    rot = np.stack([np.cos(ang / 2), np.zeros(n), np.sin(ang / 2), np.zeros(n)], axis=1)
    centroid = rig.neutral[topo.triangles].mean(axis=1)[parent]
    dirs = centroid / np.linalg.norm(centroid, axis=1, keepdims=True)
    color = np.clip(_color_field(dirs, rng) + rng.normal(0, spec.color_noise, (n, 3)), 0.05, 0.95)
    sh = rng.normal(0, spec.sh_rest_noise, (n, 16, 3))
    sh[:, 0] = (color - 0.5) / C0
    f32 = np.float32
    splats = BoundGaussians(mu.astype(f32), rot.astype(f32), log_scale.astype(f32),
                            np.full(n, logit(0.95), dtype=f32), sh.astype(f32), parent)
    return RiggedAvatar(topo, splats)


def synth_scene(spec: SynthSpec, out_dir, progress=None) -> Dataset:
    """Generate and write a dataset under ``out_dir``; returns it in memory.

    The same ``spec`` always produces byte-identical files.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "images").mkdir(exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create dataset directory {out}: {exc}") from None
    rng = np.random.default_rng(spec.seed)
    rig, topo = head_rig(spec, rng)
    cams, held = camera_ring(spec)
    gt = ground_truth_splats(spec, rig, topo, rng)
    frames = [Frame(t, "train", params=random_params(spec, rng)) for t in range(spec.n_frames)]
    frames += [Frame(t, "test", params=random_params(spec, rng))
               for t in range(spec.n_test_frames)]

    settings = RenderSettings()
    for i, fr in enumerate(frames):
        glob, _ = world_splats(gt, pose(rig, fr.params), np.float64)
        for cam in cams:
            img, _ = render_reference(glob, cam, settings)
            path = image_path(out, fr.split, i, cam.id)
            write_png(path, img)
            fr.images[cam.id] = path
        if progress is not None:
            progress(f"rendered frame {i + 1}/{len(frames)}")
    save_checkpoint(out / "ground_truth.ply", gt, rig.neutral, 0, {"synth": spec.to_dict()})
    ds = Dataset(topo, cams, frames, rig, held, rig.neutral, out, "ground_truth.ply")
    save_dataset(out, ds, images_written=True)
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=1, sort_keys=True) + "\n")
    return load_dataset(out)
