import numpy as np
import pytest

from conftest import random_rotation
from splatrig.errors import StateMissing
from splatrig.renderer import (Camera, RenderSettings, eval_sh, eval_sh_vjp, project, render,
                               render_backward, render_reference, rasterize_backward, sh_basis)
from splatrig.renderer.sh import C0
from splatrig.splats import GlobalGaussians

RED = np.array([0.5, -0.5, -0.5]) / C0
BLUE = np.array([-0.5, -0.5, 0.5]) / C0


def make_glob(mu, scale, opacity, dc, rot=None, dtype=np.float64):
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    n = len(mu)
    sh = np.zeros((n, 16, 3))
    sh[:, 0] = dc
    rot = np.tile(np.eye(3), (n, 1, 1)) if rot is None else rot
    return GlobalGaussians(mu.astype(dtype), np.asarray(rot, dtype), np.broadcast_to(scale, (n, 3)).astype(dtype),
                           np.broadcast_to(opacity, (n,)).astype(dtype), sh.astype(dtype))


def random_glob(rng, n, dtype=np.float64, spread=1.0):
    mu = rng.uniform(-spread, spread, (n, 3))
    mu[:, 2] = rng.uniform(-0.5, 0.5, n)
    rot = np.stack([random_rotation(rng) for _ in range(n)])
    sh = rng.normal(0, 0.4, (n, 16, 3))
    return GlobalGaussians(mu.astype(dtype), rot.astype(dtype),
                           rng.uniform(0.03, 0.25, (n, 3)).astype(dtype),
                           rng.uniform(0.05, 0.95, n).astype(dtype), sh.astype(dtype))


def cam16(size=16, cx=None):
    return Camera.look_at([0, 0, -4], [0, 0, 0], [0, -1, 0], size, size, fx=2.0 * size,
                          cx=cx, cy=cx)


def test_projection_on_axis_closed_form():
    cam = Camera(64, 48, 100.0, 80.0, 30.0, 20.0, np.eye(4))
    d, s = 5.0, 0.2
    proj = project(make_glob([0, 0, d], s, 0.5, 0), cam)
    np.testing.assert_allclose(proj.mean2d[0], [30, 20])
    cov = np.array([[proj.conic[0, 2], -proj.conic[0, 1]], [-proj.conic[0, 1], proj.conic[0, 0]]])
    cov /= proj.conic[0, 0] * proj.conic[0, 2] - proj.conic[0, 1] ** 2
    np.testing.assert_allclose(cov, np.diag([(100 * s / d) ** 2 + 0.3, (80 * s / d) ** 2 + 0.3]),
                               rtol=1e-12, atol=1e-12)
    assert proj.radius[0] >= 1


def test_projection_culls_behind_near_plane():
    cam = Camera(32, 32, 30.0, 30.0, 16.0, 16.0, np.eye(4), near=0.1)
    proj = project(make_glob([[0, 0, 0.05], [0, 0, -1], [0, 0, 2]], 0.1, 0.5, 0), cam)
    assert list(proj.ids) == [2]


def test_projection_rigid_invariance():
    rng = np.random.default_rng(0)
    g = random_glob(rng, 10)
    cam = cam16(32)
    off = rng.standard_normal(3)
    g2 = GlobalGaussians(g.mu + off, g.rot, g.scale, g.opacity, g.sh)
    p1, p2 = project(g, cam), project(g2, cam.translated(off))
    for f in ("mean2d", "conic", "depth", "color"):
        np.testing.assert_allclose(getattr(p1, f), getattr(p2, f), atol=1e-9)


def test_eval_sh_cases():
    rng = np.random.default_rng(1)
    dirs = rng.standard_normal((50, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    sh = np.zeros((50, 16, 3))
    np.testing.assert_allclose(eval_sh(sh, dirs), 0.5)
    sh[:, 0] = [0.3, -0.2, 1.0]
    np.testing.assert_allclose(eval_sh(sh, dirs), 0.28209479 * sh[:, 0] + 0.5, atol=1e-8)


def test_sh_higher_bands_average_out():
    rng = np.random.default_rng(2)
    dirs = rng.standard_normal((400_000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    basis = sh_basis(dirs)
    # mean of the rest bands is zero; orthonormal with the 4*pi measure
    assert np.abs(basis[:, 1:].mean(axis=0)).max() < 3e-3
    gram = basis.T @ basis / len(dirs) * 4 * np.pi
    assert np.abs(gram - np.eye(16)).max() < 2e-2
    coeffs = rng.normal(0, 0.1, (16, 3))
    coeffs[0] = 0.4
    col = basis @ coeffs + 0.5
    np.testing.assert_allclose(col.mean(axis=0), C0 * coeffs[0] + 0.5, atol=1e-3)


def test_eval_sh_vjp_matches_differences():
    rng = np.random.default_rng(3)
    n = 5
    sh = rng.normal(0, 0.3, (n, 16, 3))
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    gc = rng.standard_normal((n, 3))
    g_sh, g_dir = eval_sh_vjp(sh, d, gc)
    h = 1e-6
    num = np.zeros_like(sh)
    for idx in np.ndindex(sh.shape):
        e = np.zeros_like(sh)
        e[idx] = h
        num[idx] = np.sum(gc * (eval_sh(sh + e, d) - eval_sh(sh - e, d))) / (2 * h)
    np.testing.assert_allclose(g_sh, num, atol=1e-7)
    numd = np.zeros_like(d)
    for idx in np.ndindex(d.shape):
        e = np.zeros_like(d)
        e[idx] = h
        numd[idx] = np.sum(gc * (eval_sh(sh, d + e) - eval_sh(sh, d - e))) / (2 * h)
    np.testing.assert_allclose(g_dir, numd, atol=1e-6)


def test_single_splat_pixel_value():
    cam = Camera(16, 16, 32.0, 32.0, 7.5, 7.5, np.eye(4))
    out = render(make_glob([0, 0, 4], 0.05, 0.5, RED), cam)
    np.testing.assert_allclose(out.image[7, 7], [0.5, 0, 0], atol=1e-12)
    g = np.zeros_like(out.image)
    g[7, 7, 0] = 1
    pg = rasterize_backward(out, g)
    assert pg.color[0, 0] == pytest.approx(0.5)


def test_two_coincident_splats():
    cam = Camera(16, 16, 32.0, 32.0, 7.5, 7.5, np.eye(4))
    g = make_glob([[0, 0, 4], [0, 0, 4.5]], 0.05, 0.5, 0)
    g.sh[0, 0], g.sh[1, 0] = RED, BLUE
    # both centres project onto the same pixel centre, so alpha' = 0.5 for each
    out = render(g, cam)
    np.testing.assert_allclose(out.image[7, 7], [0.5, 0, 0.25], atol=1e-12)
    ref, _ = render_reference(g, cam)
    np.testing.assert_allclose(ref[7, 7], [0.5, 0, 0.25], atol=1e-12)


def test_empty_scene():
    g = make_glob(np.zeros((0, 3)), 0.1, 0.5, 0)
    cam = cam16()
    out = render(g, cam)
    assert not out.image.any() and np.all(out.final_transmittance == 1)
    ref, T = render_reference(g, cam)
    assert not ref.any() and np.all(T == 1)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_matches_reference(dtype):
    rng = np.random.default_rng(4)
    g = random_glob(rng, 100, dtype)
    cam = Camera.look_at([0, 0, -4], [0, 0, 0], [0, -1, 0], 64, 64, fx=100.0)
    exact = RenderSettings().exact()
    ref, _ = render_reference(g, cam, exact)
    assert np.abs(render(g, cam, exact).image - ref).max() <= 1e-5
    ref, _ = render_reference(g, cam)
    assert np.abs(render(g, cam).image - ref).max() <= 5e-4


def test_bounds_and_transmittance():
    rng = np.random.default_rng(5)
    g = random_glob(rng, 200)
    # colours inside [0, 1] in every direction
    g.sh[:, 1:] = 0
    g.sh[:, 0] = (rng.uniform(0, 1, (200, 3)) - 0.5) / C0
    cam = Camera.look_at([0, 0, -4], [0, 0, 0], [0, -1, 0], 48, 48, fx=80.0)
    out = render(g, cam)
    assert out.image.min() >= 0 and out.image.max() <= 1 + 1e-12
    assert out.final_transmittance.min() >= 0 and out.final_transmittance.max() <= 1
    # transmittance never increases as splats are added front to back
    order = np.argsort(project(g, cam).depth)
    prev = np.ones((48, 48))
    ids = project(g, cam).ids[order]
    for k in (10, 50, 200):
        sub = g.take(ids[:k])
        _, T = render_reference(sub, cam, RenderSettings().exact())
        assert np.all(T <= prev + 1e-12)
        prev = T


def test_backward_zero_and_state_missing():
    rng = np.random.default_rng(6)
    g = random_glob(rng, 30)
    cam = cam16(32)
    out = render(g, cam)
    grads = render_backward(out, np.zeros_like(out.image))
    for f in ("mu", "rot", "scale", "opacity", "sh"):
        assert not np.any(getattr(grads, f))
    out.release()
    with pytest.raises(StateMissing):
        rasterize_backward(out, np.zeros_like(out.image))


def test_visibility_flags():
    cam = Camera(16, 16, 32.0, 32.0, 7.5, 7.5, np.eye(4))
    g = make_glob([[0, 0, 4], [0, 0, 5], [50, 0, 4]], 0.05, 0.5, 0)
    g.opacity[1] = 0.999
    g.opacity[0] = 0.995
    out = render(g, cam)
    # the third splat is off screen
    assert out.visible[0] and not out.visible[2]


def _loss(glob, cam, w, settings):
    img, _ = render_reference(glob, cam, settings)
    return np.sum(w * img)


def test_render_gradients_match_reference_differences():
    rng = np.random.default_rng(7)
    g = random_glob(rng, 8, spread=0.5)
    cam = cam16()
    exact = RenderSettings().exact()
    w = rng.standard_normal((16, 16, 3))
    out = render(g, cam, exact)
    grads = render_backward(out, w)
    h = 1e-6
    for field in ("mu", "scale", "opacity"):
        base = getattr(g, field)
        num = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            old = base[idx]
            base[idx] = old + h
            lp = _loss(g, cam, w, exact)
            base[idx] = old - h
            lm = _loss(g, cam, w, exact)
            base[idx] = old
            num[idx] = (lp - lm) / (2 * h)
        ana = getattr(grads, field)
        assert np.linalg.norm(ana - num) / np.linalg.norm(num) < 1e-5, field


def test_deterministic_repeat_and_fast_mode():
    rng = np.random.default_rng(8)
    g = random_glob(rng, 300, np.float32)
    cam = Camera.look_at([0, 0, -4], [0, 0, 0], [0, -1, 0], 64, 64, fx=100.0)
    w = rng.standard_normal((64, 64, 3))
    a = render_backward(render(g, cam), w)
    b = render_backward(render(g, cam), w)
    for f in ("mu", "rot", "scale", "opacity", "sh"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    fast = render_backward(render(g, cam, RenderSettings(deterministic=False)), w)
    for f in ("mu", "rot", "scale", "opacity", "sh"):
        np.testing.assert_allclose(getattr(fast, f), getattr(a, f), rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize("depth", [0, 3])
def test_recorded_and_rewalked_backward_agree(monkeypatch, depth):
    # pixels deeper than the record fall back to walking the tile list
    from splatrig.renderer import raster

    rng = np.random.default_rng(9)
    g = random_glob(rng, 300, np.float32)
    cam = Camera.look_at([0, 0, -4], [0, 0, 0], [0, -1, 0], 48, 48, fx=80.0)
    w = rng.standard_normal((48, 48, 3))
    ref = render_backward(render(g, cam), w)
    out = render(g, cam)
    assert out.n_contrib.max() > raster.RECORD_DEPTH
    monkeypatch.setattr(raster, "RECORD_DEPTH", depth)
    out = render(g, cam)
    assert out.n_contrib.max() > depth
    got = render_backward(out, w)
    for f in ("mu", "rot", "scale", "opacity", "sh"):
        np.testing.assert_array_equal(getattr(got, f), getattr(ref, f))


@pytest.mark.parametrize("degree", [0, 1, 3])
def test_fused_sh_matches_reference_definition(degree):
    from splatrig.renderer.sh import sh_color, sh_color_vjp

    rng = np.random.default_rng(degree)
    sh = rng.normal(0, 0.5, (200, 16, 3))
    dirs = rng.standard_normal((200, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    g = rng.standard_normal((200, 3))
    n = (degree + 1) ** 2
    np.testing.assert_allclose(sh_color(sh, dirs, n), eval_sh(sh, dirs, degree), atol=1e-13)
    g_sh, g_dir = sh_color_vjp(sh, dirs, g, n)
    ref_sh, ref_dir = eval_sh_vjp(sh, dirs, g, degree)
    np.testing.assert_allclose(g_sh, ref_sh, atol=1e-13)
    np.testing.assert_allclose(g_dir, ref_dir, atol=1e-12)
