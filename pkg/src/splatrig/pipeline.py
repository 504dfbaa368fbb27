"""Forward and backward through the full chain
rig parameters -> vertices -> triangle frames -> world splats -> image -> loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import frame_vjp
from .losses import LossResult, LossWeights, total_loss
from .mesh_rig import BlendshapeRig, RigParams, all_frames, pose, pose_vjp
from .renderer import Camera, RenderOutput, RenderSettings, render, render_backward
from .splats import BoundGaussians, RiggedAvatar, accumulate_frame_grads, to_global, to_global_vjp


def world_splats(avatar: RiggedAvatar, vertices, dtype=None):
    frames = all_frames(vertices, avatar.topology)
    per_splat = frames[avatar.splats.parent]
    return to_global(avatar.splats, per_splat, dtype), per_splat


def vertex_grads(avatar: RiggedAvatar, vertices, frame_grads):
    """Chain per-splat frame gradients to per-vertex gradients."""
    topo = avatar.topology
    tri = topo.triangles
    per_tri = accumulate_frame_grads(frame_grads, avatar.splats.parent, topo.triangle_count)
    v = np.asarray(vertices, dtype=np.float64)
    g0, g1, g2 = frame_vjp(v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]],
                           per_tri.origin, per_tri.orientation, per_tri.scale)
    out = np.zeros_like(v)
    for corner, g in zip(range(3), (g0, g1, g2)):
        for c in range(3):
            out[:, c] += np.bincount(tri[:, corner], weights=g[:, c], minlength=len(v))
    return out


@dataclass
class StepResult:
    loss: LossResult
    output: RenderOutput
    splat_grads: BoundGaussians
    vertex_grads: np.ndarray | None
    rig_grads: RigParams | None


def render_avatar(avatar: RiggedAvatar, vertices, cam: Camera,
                  settings: RenderSettings = RenderSettings()) -> RenderOutput:
    glob, _ = world_splats(avatar, vertices)
    return render(glob, cam, settings)


def loss_and_grads(avatar: RiggedAvatar, cam: Camera, target, *, vertices=None,
                   rig: BlendshapeRig | None = None, params: RigParams | None = None,
                   weights: LossWeights = LossWeights(),
                   settings: RenderSettings = RenderSettings(),
                   want_vertex_grads=None) -> StepResult:
    """Loss and analytic gradients for one image.

    Pass either posed ``vertices`` or a ``rig`` with ``params``; with a rig the
    gradient on the rig parameters is returned as well.
    """
    if vertices is None:
        vertices = pose(rig, params)
    if want_vertex_grads is None:
        want_vertex_grads = rig is not None
    glob, per_splat = world_splats(avatar, vertices)
    out = render(glob, cam, settings)
    loss = total_loss(out.image, target, avatar.splats, out.visible, weights)
    g_glob = render_backward(out, loss.grad_image)
    g_local, g_frame = to_global_vjp(avatar.splats, per_splat, g_glob)
    g_local.mu_local += loss.grad_mu_local.astype(g_local.mu_local.dtype)
    g_local.log_scale += loss.grad_log_scale.astype(g_local.log_scale.dtype)
    g_vert = g_rig = None
    if want_vertex_grads:
        g_vert = vertex_grads(avatar, vertices, g_frame)
        if rig is not None:
            g_rig = pose_vjp(rig, params, g_vert)
    return StepResult(loss, out, g_local, g_vert, g_rig)
