"""Perspective projection of 3D Gaussians to screen-space ellipses (EWA linearisation)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..splats import GlobalGaussians, covariance
from .camera import Camera
from .settings import RenderSettings
from .sh import sh_color, sh_color_vjp


@dataclass
class Projected2D:
    """Screen-space splats that survived culling, in the order of ``ids``."""

    ids: np.ndarray      # (M,) index into the global splat array
    mean2d: np.ndarray   # (M, 2) pixels
    conic: np.ndarray    # (M, 3) inverse 2D covariance (a, b, c)
    depth: np.ndarray    # (M,)
    radius: np.ndarray   # (M,) pixels, integer valued
    color: np.ndarray    # (M, 3)
    alpha: np.ndarray    # (M,)
    n_total: int = 0
    cache: dict | None = None
    extent: np.ndarray | None = None  # (M, 2) half-widths of the footprint's bounding box

    def __len__(self):
        return len(self.ids)

    def box(self):
        """Per-splat (x, y) half-widths in pixels of the region that can contribute."""
        if self.extent is not None:
            return self.extent
        r = np.asarray(self.radius, dtype=np.float64)
        return np.stack([r, r], axis=1)


@dataclass
class ProjectedGrads:
    mean2d: np.ndarray
    conic: np.ndarray
    color: np.ndarray
    alpha: np.ndarray


def footprint_extent(alpha, floor):
    """Mahalanobis radius beyond which ``alpha * exp(-d^2/2)`` drops below ``floor``."""
    ratio = np.maximum(alpha / floor, 1.0)
    return np.sqrt(2.0 * np.log(ratio))


def project(glob: GlobalGaussians, cam: Camera, settings: RenderSettings = RenderSettings()) -> Projected2D:
    dt = glob.dtype
    W = cam.rotation.astype(dt)
    t = glob.mu @ W.T + cam.translation.astype(dt)
    depth = t[:, 2]
    keep = depth > cam.near

    sigma3 = covariance(glob)
    z = np.where(keep, depth, 1).astype(dt)
    J = np.zeros((len(glob), 2, 3), dtype=dt)
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * t[:, 0] / (z * z)
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * t[:, 1] / (z * z)
    M = J @ W
    cov2 = M @ sigma3 @ np.swapaxes(M, 1, 2)
    a = cov2[:, 0, 0] + settings.dilation
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1] + settings.dilation
    det = a * c - b * b
    keep &= det > 0
    det = np.where(keep, det, 1)
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mean2d = np.stack([cam.fx * t[:, 0] / z + cam.cx, cam.fy * t[:, 1] / z + cam.cy], axis=1)

    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.1))
    floor = settings.contribution_floor
    keep &= glob.opacity > floor
    k = footprint_extent(glob.opacity.astype(np.float64), floor)
    radius = np.ceil(k * np.sqrt(lam))
    # the level set's axis-aligned box is usually much tighter for flat splats
    extent = k[:, None] * np.sqrt(np.stack([a, c], axis=1).astype(np.float64))
    keep &= radius > 0
    keep &= (mean2d[:, 0] + radius > 0) & (mean2d[:, 0] - radius < cam.width)
    keep &= (mean2d[:, 1] + radius > 0) & (mean2d[:, 1] - radius < cam.height)

    ids = np.flatnonzero(keep)
    d = glob.mu[ids] - cam.center.astype(dt)
    dnorm = np.linalg.norm(d, axis=1, keepdims=True)
    dirs = d / dnorm
    n_sh = (settings.sh_degree + 1) ** 2
    color = sh_color(glob.sh[ids].astype(np.float64), dirs.astype(np.float64), n_sh).astype(dt)

    cache = dict(t=t[ids], J=J[ids], M=M[ids], sigma3=sigma3[ids], W=W, dirs=dirs, dnorm=dnorm,
                 cov_abc=np.stack([a, b, c], axis=1)[ids])
    return Projected2D(ids, mean2d[ids], conic[ids], depth[ids], radius[ids].astype(np.int64),
                       color, glob.opacity[ids], len(glob), cache, extent[ids])


def project_vjp(glob: GlobalGaussians, cam: Camera, proj: Projected2D, grads: ProjectedGrads,
                settings: RenderSettings = RenderSettings()) -> GlobalGaussians:
    """Chain screen-space gradients back to world-space splat fields.

    Culled splats receive zero gradient.
    """
    ids = proj.ids
    C = proj.cache
    n = len(glob)
    f64 = np.float64
    t = C["t"].astype(f64)
    J = C["J"].astype(f64)
    M = C["M"].astype(f64)
    S3 = C["sigma3"].astype(f64)
    Wc = C["W"].astype(f64)
    a, b, c = (C["cov_abc"][:, i].astype(f64) for i in range(3))
    g_mean = grads.mean2d.astype(f64)
    g_con = grads.conic.astype(f64)

    # conic = inverse(cov2); the off-diagonal entry appears twice in the quadratic form
    det = a * c - b * b
    Q = np.empty((len(ids), 2, 2))
    Q[:, 0, 0] = c / det
    Q[:, 0, 1] = Q[:, 1, 0] = -b / det
    Q[:, 1, 1] = a / det
    G = np.empty_like(Q)
    G[:, 0, 0] = g_con[:, 0]
    G[:, 0, 1] = G[:, 1, 0] = 0.5 * g_con[:, 1]
    G[:, 1, 1] = g_con[:, 2]
    g_cov2 = -Q @ G @ Q

    g_sigma3 = np.swapaxes(M, 1, 2) @ g_cov2 @ M
    g_M = 2.0 * g_cov2 @ M @ S3
    g_J = g_M @ Wc.T

    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    fx, fy = cam.fx, cam.fy
    g_t = np.zeros_like(t)
    g_t[:, 0] = g_mean[:, 0] * fx / z - g_J[:, 0, 2] * fx / z ** 2
    g_t[:, 1] = g_mean[:, 1] * fy / z - g_J[:, 1, 2] * fy / z ** 2
    g_t[:, 2] = (-g_mean[:, 0] * fx * x / z ** 2 - g_mean[:, 1] * fy * y / z ** 2
                 - g_J[:, 0, 0] * fx / z ** 2 - g_J[:, 1, 1] * fy / z ** 2
                 + g_J[:, 0, 2] * 2 * fx * x / z ** 3 + g_J[:, 1, 2] * 2 * fy * y / z ** 3)
    g_mu = g_t @ Wc

    g_sh, g_dir = sh_color_vjp(glob.sh[ids].astype(f64), C["dirs"].astype(f64),
                               np.ascontiguousarray(grads.color, dtype=f64),
                               (settings.sh_degree + 1) ** 2)
    dirs = C["dirs"].astype(f64)
    g_mu += (g_dir - dirs * np.sum(dirs * g_dir, axis=1, keepdims=True)) / C["dnorm"].astype(f64)

    # sigma3 = R diag(s^2) R^T
    R = glob.rot[ids].astype(f64)
    s = glob.scale[ids].astype(f64)
    g_sym = 0.5 * (g_sigma3 + np.swapaxes(g_sigma3, 1, 2))
    g_R = 2.0 * g_sym @ R * (s * s)[:, None, :]
    # diag(R^T g_sym R), without forming the full product
    g_s = 2.0 * s * np.sum(R * (g_sym @ R), axis=1)

    dt = glob.dtype
    out = GlobalGaussians(np.zeros((n, 3), dt), np.zeros((n, 3, 3), dt), np.zeros((n, 3), dt),
                          np.zeros(n, dt), np.zeros(glob.sh.shape, dt))
    out.mu[ids] = g_mu
    out.rot[ids] = g_R
    out.scale[ids] = g_s
    out.opacity[ids] = grads.alpha
    out.sh[ids] = g_sh
    return out
