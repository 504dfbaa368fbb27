"""Photometric loss, thresholded regularisers on local position/scale, and metrics.

Every loss returns ``(value, gradient)`` so the trainer can chain gradients
without an autodiff framework.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ShapeMismatch

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP = 100.0


@dataclass
class LossWeights:
    lambda_dssim: float = 0.2
    lambda_position: float = 0.01
    lambda_scaling: float = 1.0
    eps_position: float = 1.0
    eps_scaling: float = 0.6

    def __post_init__(self):
        for name, v in vars(self).items():
            if v < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.eps_scaling >= 1:
            raise ValueError("eps_scaling must be below 1")


def _same_shape(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - size // 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _blur(x, w):
    # zero padding, separable over the two image axes
    return correlate1d(correlate1d(x, w, axis=0, mode="constant"), w, axis=1, mode="constant")


def l1_loss(rendered, target):
    x, y = _same_shape(rendered, target)
    d = x - y
    return float(np.mean(np.abs(d))), np.sign(d) / d.size


def ssim_map(x, y, window=None):
    """Per-pixel, per-channel SSIM plus the intermediates needed for its gradient."""
    w = gaussian_window() if window is None else window
    mx = _blur(x, w)
    my = _blur(y, w)
    sxx = _blur(x * x, w) - mx * mx
    syy = _blur(y * y, w) - my * my
    sxy = _blur(x * y, w) - mx * my
    A1 = 2 * mx * my + SSIM_C1
    A2 = 2 * sxy + SSIM_C2
    B1 = mx * mx + my * my + SSIM_C1
    B2 = sxx + syy + SSIM_C2
    return (A1 * A2) / (B1 * B2), (mx, my, A1, A2, B1, B2, w)


def ssim(img_a, img_b):
    x, y = _same_shape(img_a, img_b)
    return float(np.mean(ssim_map(x, y)[0]))


def dssim_loss(rendered, target):
    """``(1 - SSIM) / 2`` and its gradient with respect to ``rendered``."""
    x, y = _same_shape(rendered, target)
    S, (mx, my, A1, A2, B1, B2, w) = ssim_map(x, y)
    n = S.size
    dS = -0.5 / n
    # partials of S wrt mu_x, sigma_xx and sigma_xy (as independent inputs)
    d_mx = dS * (2 * my * A2 / (B1 * B2) - 2 * mx * S / B1)
    d_sxx = dS * (-S / B2)
    d_sxy = dS * (2 * A1 / (B1 * B2))
    # mu_x = G*x, sigma_xx = G*x^2 - mu_x^2, sigma_xy = G*(xy) - mu_x mu_y
    g_mx = d_mx - 2 * mx * d_sxx - my * d_sxy
    grad = _blur(g_mx, w) + 2 * x * _blur(d_sxx, w) + y * _blur(d_sxy, w)
    return float(0.5 * (1.0 - np.mean(S))), grad


def _active(visible, n):
    if visible is None:
        return np.arange(n)
    return np.flatnonzero(np.asarray(visible))


def position_loss(mu_local, visible=None, eps=1.0):
    """Mean over visible splats of ``|| max(|mu|, eps) ||``; gradient on ``mu_local``."""
    mu = np.asarray(mu_local, dtype=np.float64)
    grad = np.zeros_like(mu)
    idx = _active(visible, len(mu))
    if idx.size == 0:
        return 0.0, grad
    m = mu[idx]
    clipped = np.maximum(np.abs(m), eps)
    norm = np.linalg.norm(clipped, axis=1)
    grad[idx] = np.where(np.abs(m) > eps, np.sign(m) * clipped / norm[:, None], 0.0) / idx.size
    return float(norm.mean()), grad


def scaling_loss(log_scale, visible=None, eps=0.6):
    """Mean over visible splats of ``|| max(exp(log_scale), eps) ||``; gradient on ``log_scale``."""
    s = np.exp(np.asarray(log_scale, dtype=np.float64))
    grad = np.zeros_like(s)
    idx = _active(visible, len(s))
    if idx.size == 0:
        return 0.0, grad
    si = s[idx]
    clipped = np.maximum(si, eps)
    norm = np.linalg.norm(clipped, axis=1)
    grad[idx] = np.where(si > eps, clipped / norm[:, None], 0.0) * si / idx.size
    return float(norm.mean()), grad


@dataclass
class LossResult:
    total: float
    l1: float
    dssim: float
    position: float
    scaling: float
    grad_image: np.ndarray
    grad_mu_local: np.ndarray
    grad_log_scale: np.ndarray


def total_loss(rendered, target, splats, visible, weights: LossWeights = LossWeights()) -> LossResult:
    """Weighted photometric loss plus regularisers gated to visible splats."""
    lam = weights.lambda_dssim
    l1, g1 = l1_loss(rendered, target)
    if lam > 0:
        ds, gd = dssim_loss(rendered, target)
    else:
        ds, gd = 0.0, 0.0
    pos, gpos = position_loss(splats.mu_local, visible, weights.eps_position)
    sca, gsca = scaling_loss(splats.log_scale, visible, weights.eps_scaling)
    total = ((1 - lam) * l1 + lam * ds + weights.lambda_position * pos
             + weights.lambda_scaling * sca)
    return LossResult(total, l1, ds, pos, sca, (1 - lam) * g1 + lam * gd,
                      weights.lambda_position * gpos, weights.lambda_scaling * gsca)


def mse(img_a, img_b):
    x, y = _same_shape(img_a, img_b)
    return float(np.mean((x - y) ** 2))


def psnr(img_a, img_b):
    m = mse(img_a, img_b)
    if m < 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / m))
