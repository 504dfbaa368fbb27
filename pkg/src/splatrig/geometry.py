"""Quaternion helpers and the per-triangle local frames that splats are rigged to.

A triangle (v0, v1, v2) defines a frame with origin at its centroid, an
orientation whose columns are the unit edge direction ``e = v1 - v0``, the unit
normal ``n`` and ``e x n``, and a scalar size ``k`` equal to the mean of the
edge length and the height of ``v2`` above that edge.

Everything here works on batches: leading axes are preserved and the last
axis holds the coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTriangle

DEGENERATE_AREA = 1e-12


# --------------------------------------------------------------------------
# quaternions, stored (w, x, y, z)
# --------------------------------------------------------------------------

def quat_normalize(q):
    q = np.asarray(q)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_matrix(q):
    """Rotation matrices for (possibly unnormalised) quaternions ``q[..., 4]``."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def quat_to_matrix_vjp(q, grad_matrix):
    """Pull a gradient on ``quat_to_matrix(q)`` back to the raw quaternion ``q``.

    The normalisation inside ``quat_to_matrix`` is included, so the result is
    orthogonal to ``q``.
    """
    q = np.asarray(q)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    u = q / norm
    w, x, y, z = u[..., 0], u[..., 1], u[..., 2], u[..., 3]
    G = grad_matrix
    g00, g01, g02 = G[..., 0, 0], G[..., 0, 1], G[..., 0, 2]
    g10, g11, g12 = G[..., 1, 0], G[..., 1, 1], G[..., 1, 2]
    g20, g21, g22 = G[..., 2, 0], G[..., 2, 1], G[..., 2, 2]
    gu = np.empty_like(u)
    gu[..., 0] = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    gu[..., 1] = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12
                      + z * g20 + w * g21 - 2 * x * g22)
    gu[..., 2] = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12
                      - w * g20 + z * g21 - 2 * y * g22)
    gu[..., 3] = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11
                      + y * g12 + x * g20 + y * g21)
    radial = np.sum(u * gu, axis=-1, keepdims=True)
    return (gu - u * radial) / norm


def matrix_to_quat(m):
    """Unit quaternion (w >= 0) for rotation matrices ``m[..., 3, 3]``."""
    m = np.asarray(m, dtype=np.float64)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for i, r in enumerate(flat):
        tr = np.trace(r)
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            out[i] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            out[i] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            out[i] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            out[i] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    out *= np.where(out[:, :1] < 0, -1.0, 1.0)
    return out.reshape(m.shape[:-2] + (4,))


def axis_angle_to_quat(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def skew(v):
    """Cross-product matrices: ``skew(a) @ b == cross(a, b)``."""
    v = np.asarray(v)
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=v.dtype)
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


# --------------------------------------------------------------------------
# triangle frames
# --------------------------------------------------------------------------

@dataclass
class TriangleFrame:
    """Origin ``T``, orientation ``R`` and scale ``k``; batched over leading axes."""

    origin: np.ndarray
    orientation: np.ndarray
    scale: np.ndarray

    def __len__(self):
        return len(self.scale)

    def __getitem__(self, idx):
        return TriangleFrame(self.origin[idx], self.orientation[idx], self.scale[idx])


def _check_area(twice_area):
    bad = np.flatnonzero(0.5 * np.atleast_1d(twice_area) < DEGENERATE_AREA)
    if bad.size:
        raise DegenerateTriangle(
            f"{bad.size} degenerate triangle(s), first at index {bad[0]} "
            f"(area < {DEGENERATE_AREA:g})", indices=bad)


def triangle_frame(v0, v1, v2) -> TriangleFrame:
    """Frame of one triangle, or of a batch when the inputs are ``(N, 3)``.

    Raises DegenerateTriangle when the area drops below ``DEGENERATE_AREA``.
    """
    v0, v1, v2 = (np.asarray(v, dtype=np.float64) for v in (v0, v1, v2))
    a = v1 - v0
    b = v2 - v0
    m = np.cross(a, b)
    la = np.linalg.norm(a, axis=-1)
    lm = np.linalg.norm(m, axis=-1)
    _check_area(lm)
    e = a / la[..., None]
    n = m / lm[..., None]
    w = np.cross(e, n)
    orientation = np.stack([e, n, w], axis=-1)
    origin = (v0 + v1 + v2) / 3.0
    # height of v2 above the v0-v1 line is twice the area over the base
    scale = 0.5 * (la + lm / la)
    return TriangleFrame(origin, orientation, scale)


@dataclass
class FrameJacobians:
    """Partial derivatives of a frame w.r.t. the nine vertex coordinates.

    The last axis indexes (v0x, v0y, v0z, v1x, ..., v2z).
    """

    d_origin: np.ndarray       # (..., 3, 9)
    d_orientation: np.ndarray  # (..., 3, 3, 9)
    d_scale: np.ndarray        # (..., 9)


def frame_jacobians(v0, v1, v2) -> FrameJacobians:
    v0, v1, v2 = (np.asarray(v, dtype=np.float64) for v in (v0, v1, v2))
    batch = v0.shape[:-1]
    a = v1 - v0
    b = v2 - v0
    m = np.cross(a, b)
    la = np.linalg.norm(a, axis=-1)
    lm = np.linalg.norm(m, axis=-1)
    _check_area(lm)
    e = a / la[..., None]
    n = m / lm[..., None]
    eye = np.eye(3)

    de_da = (eye - e[..., :, None] * e[..., None, :]) / la[..., None, None]
    dm_da = -skew(b)
    dm_db = skew(a)
    dn_dm = (eye - n[..., :, None] * n[..., None, :]) / lm[..., None, None]
    dn_da = dn_dm @ dm_da
    dn_db = dn_dm @ dm_db
    # w = e x n
    dw_da = -skew(n) @ de_da + skew(e) @ dn_da
    dw_db = skew(e) @ dn_db

    dlm_da = np.einsum("...i,...ij->...j", n, dm_da)
    dlm_db = np.einsum("...i,...ij->...j", n, dm_db)
    dk_da = 0.5 * (e + dlm_da / la[..., None] - (lm / la ** 2)[..., None] * e)
    dk_db = 0.5 * dlm_db / la[..., None]

    # columns of R are (e, n, w); index [..., row, col, coord]
    dR_da = np.stack([de_da, dn_da, dw_da], axis=-2)
    dR_db = np.stack([np.zeros_like(dn_db), dn_db, dw_db], axis=-2)

    d_orientation = np.concatenate([-dR_da - dR_db, dR_da, dR_db], axis=-1)
    d_scale = np.concatenate([-dk_da - dk_db, dk_da, dk_db], axis=-1)
    third = np.broadcast_to(eye / 3.0, batch + (3, 3))
    d_origin = np.concatenate([third, third, third], axis=-1)
    return FrameJacobians(d_origin, d_orientation, d_scale)


def frame_vjp(v0, v1, v2, grad_origin, grad_orientation, grad_scale):
    """Vector-Jacobian product of ``triangle_frame``.

    Returns the gradients on (v0, v1, v2), each shaped like the vertices.
    """
    jac = frame_jacobians(v0, v1, v2)
    g = np.einsum("...i,...ik->...k", grad_origin, jac.d_origin)
    g += np.einsum("...ij,...ijk->...k", grad_orientation, jac.d_orientation)
    g += np.asarray(grad_scale)[..., None] * jac.d_scale
    return g[..., 0:3], g[..., 3:6], g[..., 6:9]
