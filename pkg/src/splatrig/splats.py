"""Splats bound to triangles and the local-to-world rigging transform.

Each splat stores its position, rotation and log-scale in the local frame of
its parent triangle, with position and scale measured in units of the
triangle size ``k``.  At render time::

    rot_world   = R @ r
    mu_world    = k * R @ mu_local + T
    scale_world = k * exp(log_scale)

Arrays are stored structure-of-arrays; a single splat is simply a batch of
one.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from .geometry import TriangleFrame, quat_to_matrix, quat_to_matrix_vjp
from .mesh_rig import Topology, all_frames

SH_COEFFS = 16
INIT_OPACITY = 0.1


def sigmoid(x):
    return expit(x)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class BoundGaussians:
    mu_local: np.ndarray       # (N, 3), units of k
    rot_local: np.ndarray      # (N, 4) quaternion w, x, y, z
    log_scale: np.ndarray      # (N, 3)
    opacity_logit: np.ndarray  # (N,)
    sh: np.ndarray             # (N, 16, 3)
    parent: np.ndarray         # (N,) triangle index

    PARAMS = ("mu_local", "rot_local", "log_scale", "opacity_logit", "sh")

    def __len__(self):
        return len(self.parent)

    @property
    def dtype(self):
        return self.mu_local.dtype

    @property
    def scale(self):
        return np.exp(self.log_scale)

    @property
    def opacity(self):
        return sigmoid(self.opacity_logit)

    def take(self, idx):
        return BoundGaussians(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def copy(self):
        return BoundGaussians(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def astype(self, dtype):
        kw = {name: getattr(self, name).astype(dtype) for name in self.PARAMS}
        return BoundGaussians(parent=self.parent.copy(), **kw)

    @staticmethod
    def concatenate(parts):
        return BoundGaussians(**{f.name: np.concatenate([getattr(p, f.name) for p in parts])
                                 for f in fields(BoundGaussians)})

    @classmethod
    def zeros_like(cls, other):
        return cls(**{f.name: np.zeros_like(getattr(other, f.name)) for f in fields(cls)})


@dataclass
class GlobalGaussians:
    mu: np.ndarray       # (N, 3) metric
    rot: np.ndarray      # (N, 3, 3)
    scale: np.ndarray    # (N, 3) metric
    opacity: np.ndarray  # (N,) activated
    sh: np.ndarray       # (N, 16, 3)

    def __len__(self):
        return len(self.opacity)

    @property
    def dtype(self):
        return self.mu.dtype

    def take(self, idx):
        return GlobalGaussians(self.mu[idx], self.rot[idx], self.scale[idx],
                               self.opacity[idx], self.sh[idx])

    def astype(self, dtype):
        return GlobalGaussians(*(np.asarray(getattr(self, f.name), dtype=dtype) for f in fields(self)))


class RiggedAvatar:
    """Topology, bound splats and the number of splats attached to each triangle."""

    def __init__(self, topology: Topology, splats: BoundGaussians):
        self.topology = topology
        self.splats = splats
        self.per_triangle_count = np.bincount(splats.parent, minlength=topology.triangle_count)

    def __len__(self):
        return len(self.splats)

    def replace_splats(self, splats: BoundGaussians):
        self.splats = splats
        self.per_triangle_count = np.bincount(splats.parent, minlength=self.topology.triangle_count)

    def copy(self):
        return RiggedAvatar(self.topology, self.splats.copy())

    def check_invariants(self):
        """Exhaustive recount; raises AssertionError describing the first violation."""
        parent = self.splats.parent
        n_tri = self.topology.triangle_count
        assert parent.min(initial=0) >= 0 and parent.max(initial=-1) < n_tri, "parent index out of range"
        recount = np.zeros(n_tri, dtype=np.int64)
        for p in parent:
            recount[p] += 1
        assert np.array_equal(recount, self.per_triangle_count), "per-triangle count out of sync"
        assert recount.sum() == len(parent)
        assert np.all(recount >= 1), f"triangle {int(np.argmin(recount))} has no splat"

    def frames_for(self, vertices) -> TriangleFrame:
        return all_frames(vertices, self.topology)


def init_avatar(topology: Topology, rest_vertices, dtype=np.float32) -> RiggedAvatar:
    """One splat per triangle at the local origin with unit local scale.

    The frames are evaluated at ``rest_vertices`` only to reject degenerate
    triangles up front.
    """
    all_frames(rest_vertices, topology)
    n = topology.triangle_count
    rot = np.zeros((n, 4), dtype=dtype)
    rot[:, 0] = 1
    splats = BoundGaussians(
        mu_local=np.zeros((n, 3), dtype=dtype),
        rot_local=rot,
        log_scale=np.zeros((n, 3), dtype=dtype),
        opacity_logit=np.full(n, logit(INIT_OPACITY), dtype=dtype),
        # zero DC coefficient evaluates to mid-gray (0.5)
        sh=np.zeros((n, SH_COEFFS, 3), dtype=dtype),
        parent=np.arange(n, dtype=np.int64),
    )
    return RiggedAvatar(topology, splats)


def to_global(g: BoundGaussians, f: TriangleFrame, dtype=None) -> GlobalGaussians:
    """World-space splats; ``f`` must already be indexed per splat (``frames[parent]``)."""
    dtype = dtype or g.dtype
    R = f.orientation
    k = f.scale[:, None]
    r = quat_to_matrix(g.rot_local.astype(np.float64))
    rot = R @ r
    mu = k * (R @ g.mu_local.astype(np.float64)[:, :, None])[..., 0] + f.origin
    scale = k * np.exp(g.log_scale.astype(np.float64))
    return GlobalGaussians(mu.astype(dtype), rot.astype(dtype), scale.astype(dtype),
                           sigmoid(g.opacity_logit.astype(np.float64)).astype(dtype),
                           g.sh.astype(dtype, copy=False))


def to_global_vjp(g: BoundGaussians, f: TriangleFrame, grad: GlobalGaussians):
    """Pull world-space gradients back to local parameters and per-splat frames.

    Returns ``(BoundGaussians of gradients, TriangleFrame of gradients)``; the
    gradient ``parent`` field is a copy of the splats' parent indices.
    """
    R = f.orientation
    k = f.scale
    mu_l = g.mu_local.astype(np.float64)
    s = np.exp(g.log_scale.astype(np.float64))
    r = quat_to_matrix(g.rot_local.astype(np.float64))
    g_mu = np.asarray(grad.mu, dtype=np.float64)
    g_rot = np.asarray(grad.rot, dtype=np.float64)
    g_scale = np.asarray(grad.scale, dtype=np.float64)

    Rt = np.swapaxes(R, 1, 2)
    Rmu = (R @ mu_l[:, :, None])[..., 0]
    # rot = R r
    g_r = Rt @ g_rot
    g_R = g_rot @ np.swapaxes(r, 1, 2)
    # mu = k R mu_l + T
    g_mu_l = k[:, None] * (Rt @ g_mu[:, :, None])[..., 0]
    g_R += k[:, None, None] * g_mu[:, :, None] * mu_l[:, None, :]
    g_k = np.sum(Rmu * g_mu, axis=1)
    # scale = k s
    g_s = k[:, None] * g_scale
    g_k += np.sum(s * g_scale, axis=1)

    alpha = sigmoid(g.opacity_logit.astype(np.float64))
    dt = g.dtype
    local = BoundGaussians(
        mu_local=g_mu_l.astype(dt),
        rot_local=quat_to_matrix_vjp(g.rot_local.astype(np.float64), g_r).astype(dt),
        log_scale=(g_s * s).astype(dt),
        opacity_logit=(alpha * (1 - alpha) * np.asarray(grad.opacity, dtype=np.float64)).astype(dt),
        sh=np.asarray(grad.sh).astype(dt),
        parent=g.parent.copy(),
    )
    return local, TriangleFrame(g_mu.copy(), g_R, g_k)


def covariance(glob: GlobalGaussians):
    """``R S S^T R^T`` for every splat."""
    M = glob.rot * glob.scale[:, None, :]
    return M @ np.swapaxes(M, -1, -2)


def accumulate_frame_grads(frame_grads: TriangleFrame, parent, n_triangles) -> TriangleFrame:
    """Sum per-splat frame gradients into per-triangle gradients."""
    def scatter(x):
        flat = x.reshape(len(parent), -1)
        out = np.zeros((n_triangles, flat.shape[1]))
        for c in range(flat.shape[1]):
            out[:, c] = np.bincount(parent, weights=flat[:, c], minlength=n_triangles)
        return out.reshape((n_triangles,) + x.shape[1:])

    return TriangleFrame(scatter(frame_grads.origin), scatter(frame_grads.orientation),
                         scatter(frame_grads.scale[:, None])[:, 0])
