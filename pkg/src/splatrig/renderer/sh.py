"""Real spherical harmonics up to degree 3 and view-dependent color."""
import numpy as np
from numba import njit, prange

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
      -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


def sh_basis(dirs, with_grad=False):
    """Basis values ``(N, 16)`` for unit directions ``(N, 3)``; optionally the
    derivatives ``(N, 16, 3)`` with respect to the direction components."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    one = np.ones_like(x)
    b = np.stack([
        C0 * one,
        -C1 * y, C1 * z, -C1 * x,
        C2[0] * x * y, C2[1] * y * z, C2[2] * (2 * zz - xx - yy), C2[3] * x * z, C2[4] * (xx - yy),
        C3[0] * y * (3 * xx - yy), C3[1] * x * y * z, C3[2] * y * (4 * zz - xx - yy),
        C3[3] * z * (2 * zz - 3 * xx - 3 * yy), C3[4] * x * (4 * zz - xx - yy),
        C3[5] * z * (xx - yy), C3[6] * x * (xx - 3 * yy),
    ], axis=1)
    if not with_grad:
        return b
    g = np.zeros((len(x), 16, 3), dtype=b.dtype)
    g[:, 1, 1] = -C1
    g[:, 2, 2] = C1
    g[:, 3, 0] = -C1
    g[:, 4, 0], g[:, 4, 1] = C2[0] * y, C2[0] * x
    g[:, 5, 1], g[:, 5, 2] = C2[1] * z, C2[1] * y
    g[:, 6, 0], g[:, 6, 1], g[:, 6, 2] = -2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z
    g[:, 7, 0], g[:, 7, 2] = C2[3] * z, C2[3] * x
    g[:, 8, 0], g[:, 8, 1] = 2 * C2[4] * x, -2 * C2[4] * y
    g[:, 9, 0], g[:, 9, 1] = C3[0] * 6 * x * y, C3[0] * (3 * xx - 3 * yy)
    g[:, 10, 0], g[:, 10, 1], g[:, 10, 2] = C3[1] * y * z, C3[1] * x * z, C3[1] * x * y
    g[:, 11, 0] = C3[2] * (-2 * x * y)
    g[:, 11, 1] = C3[2] * (4 * zz - xx - 3 * yy)
    g[:, 11, 2] = C3[2] * (8 * y * z)
    g[:, 12, 0] = C3[3] * (-6 * x * z)
    g[:, 12, 1] = C3[3] * (-6 * y * z)
    g[:, 12, 2] = C3[3] * (6 * zz - 3 * xx - 3 * yy)
    g[:, 13, 0] = C3[4] * (4 * zz - 3 * xx - yy)
    g[:, 13, 1] = C3[4] * (-2 * x * y)
    g[:, 13, 2] = C3[4] * (8 * x * z)
    g[:, 14, 0], g[:, 14, 1], g[:, 14, 2] = C3[5] * 2 * x * z, C3[5] * -2 * y * z, C3[5] * (xx - yy)
    g[:, 15, 0], g[:, 15, 1] = C3[6] * (3 * xx - 3 * yy), C3[6] * -6 * x * y
    return b, g


def eval_sh(sh, dirs, degree=3):
    """RGB for coefficients ``sh (N, 16, 3)`` seen along unit ``dirs (N, 3)``.

    Only the first ``(degree + 1)**2`` coefficients are used.  The result is
    offset by 0.5 and clamped at zero from below.
    """
    sh = np.asarray(sh)
    dirs = np.asarray(dirs)
    if sh.ndim == 2:
        return eval_sh(sh[None], dirs.reshape(1, 3), degree)[0]
    n = (degree + 1) ** 2
    b = sh_basis(dirs)[:, :n]
    return np.maximum((b[:, None, :] @ sh[:, :n])[:, 0] + 0.5, 0.0)


def eval_sh_vjp(sh, dirs, grad_color, degree=3):
    """Gradients of ``sum(grad_color * eval_sh(sh, dirs))`` on ``sh`` and ``dirs``."""
    n = (degree + 1) ** 2
    b, db = sh_basis(dirs, with_grad=True)
    raw = (b[:, None, :n] @ sh[:, :n])[:, 0] + 0.5
    g = np.where(raw > 0, grad_color, 0.0)
    g_sh = np.zeros(sh.shape, dtype=np.result_type(sh, g))
    g_sh[:, :n] = b[:, :n, None] * g[:, None, :]
    g_b = (sh[:, :n] @ g[:, :, None])[..., 0]
    g_dir = (g_b[:, None, :] @ db[:, :n])[:, 0]
    return g_sh, g_dir


# ---------------------------------------------------------------- fused kernels
# The tile renderer's projection calls these; the numpy functions above stay
# the reference definition.

@njit(cache=True)
def _basis_row(x, y, z, b, i):
    xx, yy, zz = x * x, y * y, z * z
    b[i, 0] = C0
    b[i, 1] = -C1 * y
    b[i, 2] = C1 * z
    b[i, 3] = -C1 * x
    b[i, 4] = C2[0] * x * y
    b[i, 5] = C2[1] * y * z
    b[i, 6] = C2[2] * (2 * zz - xx - yy)
    b[i, 7] = C2[3] * x * z
    b[i, 8] = C2[4] * (xx - yy)
    b[i, 9] = C3[0] * y * (3 * xx - yy)
    b[i, 10] = C3[1] * x * y * z
    b[i, 11] = C3[2] * y * (4 * zz - xx - yy)
    b[i, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    b[i, 13] = C3[4] * x * (4 * zz - xx - yy)
    b[i, 14] = C3[5] * z * (xx - yy)
    b[i, 15] = C3[6] * x * (xx - 3 * yy)


@njit(parallel=True, cache=True)
def sh_color(sh, dirs, n):
    """Fused :func:`eval_sh` over the first ``n`` coefficients (float64)."""
    m = sh.shape[0]
    b = np.empty((m, 16))
    out = np.empty((m, 3))
    for i in prange(m):
        _basis_row(dirs[i, 0], dirs[i, 1], dirs[i, 2], b, i)
        for c in range(3):
            acc = 0.0
            for k in range(n):
                acc += b[i, k] * sh[i, k, c]
            out[i, c] = max(acc + 0.5, 0.0)
    return out


@njit(parallel=True, cache=True)
def sh_color_vjp(sh, dirs, grad_color, n):
    """Fused :func:`eval_sh_vjp`; returns ``(g_sh (M, 16, 3), g_dir (M, 3))``."""
    m = sh.shape[0]
    b = np.empty((m, 16))
    db = np.empty((m, 16, 3))
    g_sh = np.zeros((m, 16, 3))
    g_dir = np.empty((m, 3))
    for i in prange(m):
        x, y, z = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        _basis_row(x, y, z, b, i)
        r0 = 0.0
        r1 = 0.0
        r2 = 0.0
        for k in range(n):
            r0 += b[i, k] * sh[i, k, 0]
            r1 += b[i, k] * sh[i, k, 1]
            r2 += b[i, k] * sh[i, k, 2]
        # the clamp at zero passes no gradient
        g0 = grad_color[i, 0] if r0 + 0.5 > 0 else 0.0
        g1 = grad_color[i, 1] if r1 + 0.5 > 0 else 0.0
        g2 = grad_color[i, 2] if r2 + 0.5 > 0 else 0.0
        for k in range(n):
            g_sh[i, k, 0] = b[i, k] * g0
            g_sh[i, k, 1] = b[i, k] * g1
            g_sh[i, k, 2] = b[i, k] * g2
        xx, yy, zz = x * x, y * y, z * z
        d = db[i]
        d[:, :] = 0.0
        d[1, 1] = -C1
        d[2, 2] = C1
        d[3, 0] = -C1
        d[4, 0], d[4, 1] = C2[0] * y, C2[0] * x
        d[5, 1], d[5, 2] = C2[1] * z, C2[1] * y
        d[6, 0], d[6, 1], d[6, 2] = -2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z
        d[7, 0], d[7, 2] = C2[3] * z, C2[3] * x
        d[8, 0], d[8, 1] = 2 * C2[4] * x, -2 * C2[4] * y
        d[9, 0], d[9, 1] = C3[0] * 6 * x * y, C3[0] * (3 * xx - 3 * yy)
        d[10, 0], d[10, 1], d[10, 2] = C3[1] * y * z, C3[1] * x * z, C3[1] * x * y
        d[11, 0] = C3[2] * (-2 * x * y)
        d[11, 1] = C3[2] * (4 * zz - xx - 3 * yy)
        d[11, 2] = C3[2] * (8 * y * z)
        d[12, 0] = C3[3] * (-6 * x * z)
        d[12, 1] = C3[3] * (-6 * y * z)
        d[12, 2] = C3[3] * (6 * zz - 3 * xx - 3 * yy)
        d[13, 0] = C3[4] * (4 * zz - 3 * xx - yy)
        d[13, 1] = C3[4] * (-2 * x * y)
        d[13, 2] = C3[4] * (8 * x * z)
        d[14, 0], d[14, 1], d[14, 2] = C3[5] * 2 * x * z, C3[5] * -2 * y * z, C3[5] * (xx - yy)
        d[15, 0], d[15, 1] = C3[6] * (3 * xx - 3 * yy), C3[6] * -6 * x * y
        for e in range(3):
            acc = 0.0
            for k in range(n):
                gb = sh[i, k, 0] * g0 + sh[i, k, 1] * g1 + sh[i, k, 2] * g2
                acc += gb * d[k, e]
            g_dir[i, e] = acc
    return g_sh, g_dir
