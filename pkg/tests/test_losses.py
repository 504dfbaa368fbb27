import numpy as np
import pytest

from conftest import random_splats
from splatrig.errors import ShapeMismatch
from splatrig.losses import (LossWeights, dssim_loss, gaussian_window, l1_loss, position_loss, psnr,
                             scaling_loss, ssim, total_loss)


def direct_ssim(x, y, size=11, sigma=1.5):
    """Per-pixel SSIM with an explicit 2D window and zero padding."""
    ax = np.arange(size) - size // 2
    g = np.exp(-ax ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    win = np.outer(g, g)
    pad = size // 2
    H, W, C = x.shape
    out = np.zeros((H, W, C))
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    yp = np.pad(y, ((pad, pad), (pad, pad), (0, 0)))
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    for i in range(H):
        for j in range(W):
            px = xp[i:i + size, j:j + size]
            py = yp[i:i + size, j:j + size]
            mx = np.einsum("ij,ijc->c", win, px)
            my = np.einsum("ij,ijc->c", win, py)
            sxx = np.einsum("ij,ijc->c", win, px * px) - mx ** 2
            syy = np.einsum("ij,ijc->c", win, py * py) - my ** 2
            sxy = np.einsum("ij,ijc->c", win, px * py) - mx * my
            out[i, j] = ((2 * mx * my + c1) * (2 * sxy + c2)
                         / ((mx ** 2 + my ** 2 + c1) * (sxx + syy + c2)))
    return out.mean()


def test_weights_defaults():
    w = LossWeights()
    assert (1 - w.lambda_dssim, w.lambda_dssim, w.lambda_position, w.lambda_scaling) == (0.8, 0.2, 0.01, 1.0)
    assert (w.eps_position, w.eps_scaling) == (1.0, 0.6)
    with pytest.raises(ValueError):
        LossWeights(eps_scaling=1.0)
    with pytest.raises(ValueError):
        LossWeights(lambda_position=-1)


def test_l1():
    rng = np.random.default_rng(0)
    t = rng.uniform(0, 0.8, (8, 8, 3))
    assert l1_loss(t, t)[0] == 0
    val, grad = l1_loss(t + 0.1, t)
    assert val == pytest.approx(0.1)
    np.testing.assert_allclose(grad, 1 / t.size)
    with pytest.raises(ShapeMismatch):
        l1_loss(t, t[:4])


def test_ssim_against_direct_formula():
    rng = np.random.default_rng(1)
    for _ in range(3):
        a, b = rng.uniform(0, 1, (2, 20, 17, 3))
        assert ssim(a, b) == pytest.approx(direct_ssim(a, b), abs=1e-6)
    assert ssim(a, a) == pytest.approx(1.0)
    np.testing.assert_allclose(gaussian_window().sum(), 1.0)


def test_dssim_checkerboard():
    yy, xx = np.mgrid[:16, :16]
    t = np.repeat(((xx + yy) % 2).astype(float)[..., None], 3, axis=2)
    val, _ = dssim_loss(1 - t, t)
    assert 0.5 < val <= 1
    assert val == pytest.approx((1 - direct_ssim(1 - t, t)) / 2, abs=1e-9)
    assert dssim_loss(t, t)[0] == pytest.approx(0, abs=1e-12)


def test_dssim_gradient():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(0, 1, (2, 32, 32, 3))
    _, g = dssim_loss(a, b)
    h = 1e-6
    idx = [tuple(rng.integers(0, s) for s in a.shape) for _ in range(40)] + [(0, 0, 0), (31, 31, 2)]
    for i in idx:
        e = np.zeros_like(a)
        e[i] = h
        num = (dssim_loss(a + e, b)[0] - dssim_loss(a - e, b)[0]) / (2 * h)
        assert abs(num - g[i]) <= 1e-4 * max(abs(num), 1e-6) + 1e-9


def test_position_examples():
    v, g = position_loss(np.array([[0.5, 0, 0]]))
    assert v == pytest.approx(np.sqrt(3), abs=1e-6) and not g.any()
    v, g = position_loss(np.array([[2.0, 0, 0]]))
    assert v == pytest.approx(np.sqrt(6), abs=1e-6)
    assert g[0, 0] != 0 and not g[0, 1:].any()
    assert g[0, 0] == pytest.approx(2 / np.sqrt(6))
    v, g = position_loss(np.array([[-2.0, 0, 0]]))
    assert v == pytest.approx(np.sqrt(6)) and g[0, 0] == pytest.approx(-2 / np.sqrt(6))
    assert position_loss(np.ones((3, 3)), np.zeros(3, bool))[0] == 0


def test_scaling_examples():
    v, g = scaling_loss(np.log(np.array([[0.5, 0.5, 0.5]])))
    assert v == pytest.approx(0.6 * np.sqrt(3), abs=1e-6) and not g.any()
    v, g = scaling_loss(np.log(np.array([[1.0, 0.5, 0.5]])))
    assert v == pytest.approx(1.3115, abs=1e-4)
    assert v == pytest.approx(np.sqrt(1.72), abs=1e-12)
    # chain rule through exp multiplies by s = 1
    assert g[0, 0] == pytest.approx(1 / np.sqrt(1.72)) and not g[0, 1:].any()
    v, g = scaling_loss(np.log(np.array([[2.0, 0.5, 0.5]])))
    assert g[0, 0] == pytest.approx(2 * 2 / np.sqrt(4.72))


def test_total_loss_floor_and_linearity():
    rng = np.random.default_rng(3)
    sp = random_splats(rng, 10, 4, dtype=np.float64)
    sp.mu_local[:] = rng.uniform(-0.9, 0.9, (10, 3))
    sp.log_scale[:] = np.log(rng.uniform(0.1, 0.55, (10, 3)))
    img = rng.uniform(0, 1, (16, 16, 3))
    vis = np.ones(10, bool)
    res = total_loss(img, img, sp, vis)
    assert res.total == pytest.approx(0.01 * np.sqrt(3) + 0.6 * np.sqrt(3), abs=1e-9)
    assert not res.grad_mu_local.any() and not res.grad_log_scale.any()
    sp.mu_local[0] = [3, 0, 0]
    a = total_loss(img, img, sp, vis, LossWeights(lambda_position=0.01))
    b = total_loss(img, img, sp, vis, LossWeights(lambda_position=0.02))
    assert b.total - a.total == pytest.approx(0.01 * a.position, rel=1e-12)


def test_regularizer_gating():
    rng = np.random.default_rng(4)
    sp = random_splats(rng, 6, 2, dtype=np.float64)
    sp.mu_local[:] = 3.0
    sp.log_scale[:] = 0.5
    vis = np.array([1, 0, 1, 0, 0, 1], bool)
    res = total_loss(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)), sp, vis)
    assert not res.grad_mu_local[~vis].any() and not res.grad_log_scale[~vis].any()
    assert res.grad_mu_local[vis].all() and res.grad_log_scale[vis].all()


def test_psnr():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert psnr(a, a) == 100.0
    assert ssim(a + 0.3, a + 0.3) == pytest.approx(1.0)
    rng = np.random.default_rng(5)
    x, y = rng.uniform(0, 1, (2, 9, 9, 3))
    assert psnr(x, y) == pytest.approx(10 * np.log10(1 / np.mean((x - y) ** 2)), abs=1e-9)
