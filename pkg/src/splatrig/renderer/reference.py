"""Brute-force compositor used as an oracle for the tiled rasterizer.

Every splat in front of the near plane is evaluated at every pixel in global
depth order with float64 accumulation; there is no tiling and no early ray
termination.  Projection is recomputed here from scratch.
"""
import numpy as np

from .camera import Camera
from .settings import RenderSettings
from .sh import eval_sh


def _project_all(glob, cam: Camera, settings: RenderSettings):
    mu = np.asarray(glob.mu, dtype=np.float64)
    R = np.asarray(glob.rot, dtype=np.float64)
    s = np.asarray(glob.scale, dtype=np.float64)
    W = cam.rotation
    t = mu @ W.T + cam.translation
    front = t[:, 2] > cam.near
    t, mu, R, s = t[front], mu[front], R[front], s[front]
    out = []
    for i in range(len(t)):
        x, y, z = t[i]
        J = np.array([[cam.fx / z, 0.0, -cam.fx * x / z ** 2],
                      [0.0, cam.fy / z, -cam.fy * y / z ** 2]])
        Rs = R[i] * s[i]
        cov = J @ W @ (Rs @ Rs.T) @ W.T @ J.T + settings.dilation * np.eye(2)
        out.append(np.linalg.inv(cov))
    conic = np.array(out).reshape(-1, 2, 2)
    mean2d = np.stack([cam.fx * t[:, 0] / t[:, 2] + cam.cx, cam.fy * t[:, 1] / t[:, 2] + cam.cy], axis=1)
    dirs = mu - cam.center
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    color = eval_sh(np.asarray(glob.sh, dtype=np.float64)[front], dirs, settings.sh_degree)
    alpha = np.asarray(glob.opacity, dtype=np.float64)[front]
    return mean2d, conic, color, alpha, t[:, 2]


def render_reference(glob, cam: Camera, settings: RenderSettings = RenderSettings(), rows_per_chunk=8):
    """Return ``(image, transmittance)`` in float64."""
    H, W = cam.height, cam.width
    image = np.zeros((H, W, 3))
    trans = np.ones((H, W))
    if len(glob) == 0:
        return image, trans
    mean2d, conic, color, alpha, depth = _project_all(glob, cam, settings)
    order = np.argsort(depth, kind="stable")
    mean2d, conic, color, alpha = mean2d[order], conic[order], color[order], alpha[order]
    # largest std-dev of each footprint, used only to drop splats that are
    # skipped everywhere in a chunk
    sigma_max2 = 1.0 / np.linalg.eigvalsh(conic)[:, 0]
    xs = np.arange(W) + 0.5
    skip = settings.skip_alpha
    for r0 in range(0, H, rows_per_chunk):
        r1 = min(H, r0 + rows_per_chunk)
        sel = np.arange(len(alpha))
        if skip > 0:
            dx = np.maximum(np.maximum(0.0 - mean2d[:, 0], mean2d[:, 0] - W), 0.0)
            dy = np.maximum(np.maximum(r0 + 0.5 - mean2d[:, 1], mean2d[:, 1] - (r1 - 0.5)), 0.0)
            bound = alpha * np.exp(-0.5 * (dx * dx + dy * dy) / sigma_max2)
            sel = np.flatnonzero(bound >= skip)
        if sel.size == 0:
            continue
        ys = np.arange(r0, r1) + 0.5
        px = np.broadcast_to(xs[None, :], (r1 - r0, W)).reshape(-1)
        py = np.broadcast_to(ys[:, None], (r1 - r0, W)).reshape(-1)
        d_x = px[:, None] - mean2d[sel, 0][None, :]
        d_y = py[:, None] - mean2d[sel, 1][None, :]
        q = (conic[sel, 0, 0] * d_x * d_x + 2 * conic[sel, 0, 1] * d_x * d_y
             + conic[sel, 1, 1] * d_y * d_y)
        a = np.minimum(alpha[sel] * np.exp(-0.5 * q), settings.alpha_cap)
        if skip > 0:
            a = np.where(a < skip, 0.0, a)
        one_minus = 1.0 - a
        T_before = np.cumprod(np.concatenate([np.ones((len(px), 1)), one_minus[:, :-1]], axis=1), axis=1)
        weights = a * T_before
        image[r0:r1] = (weights @ color[sel]).reshape(r1 - r0, W, 3)
        trans[r0:r1] = (T_before[:, -1] * one_minus[:, -1]).reshape(r1 - r0, W)
    return image, trans
