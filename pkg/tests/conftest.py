import numpy as np
import pytest

from splatrig.mesh_rig import BlendshapeRig, RigParams, grid_mesh
from splatrig.renderer import Camera
from splatrig.splats import BoundGaussians, RiggedAvatar, logit
from splatrig.synth import SynthSpec, synth_scene


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_triangle(rng, min_area=1e-2):
    while True:
        v = rng.standard_normal((3, 3))
        if 0.5 * np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0])) > min_area:
            return v


def random_splats(rng, n, n_tri, dtype=np.float32, opacity=(0.2, 0.9)):
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    sh = rng.normal(0, 0.3, (n, 16, 3))
    return BoundGaussians(
        mu_local=rng.uniform(-0.6, 0.6, (n, 3)).astype(dtype),
        rot_local=q.astype(dtype),
        log_scale=np.log(rng.uniform(0.3, 0.9, (n, 3))).astype(dtype),
        opacity_logit=logit(rng.uniform(*opacity, n)).astype(dtype),
        sh=sh.astype(dtype),
        parent=rng.integers(0, n_tri, n),
    )


def small_scene(seed, n_splats=12, size=16):
    """A 3x2 grid mesh (12 triangles) seen head-on by a ``size`` pixel camera."""
    rng = np.random.default_rng(seed)
    verts, topo = grid_mesh(3, 2, size=1.0)
    verts = verts - verts.mean(axis=0)
    basis = rng.normal(0, 0.05, (2,) + verts.shape)
    rig = BlendshapeRig(verts, basis)
    sp = random_splats(rng, n_splats, topo.triangle_count)
    sp.parent[:topo.triangle_count] = np.arange(topo.triangle_count)[:n_splats]
    avatar = RiggedAvatar(topo, sp)
    params = RigParams(rng.normal(0, 0.05, 3), np.r_[1.0, rng.normal(0, 0.05, 3)], rng.normal(0, 0.5, 2))
    cam = Camera.look_at([0, 0, 4.0], [0, 0, 0], [0, 1, 0], size, size, fx=1.2 * size)
    target = rng.uniform(0, 1, (size, size, 3)).astype(np.float32)
    return avatar, rig, params, cam, target


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small synthetic dataset shared by the I/O, trainer and CLI tests."""
    spec = SynthSpec(subdivisions=1, n_blend=3, n_cameras=4, image_size=32, n_frames=3,
                     n_test_frames=2, splats_per_triangle=2, seed=3)
    root = tmp_path_factory.mktemp("tiny")
    ds = synth_scene(spec, root)
    return ds, spec, root


# one status line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def report_criterion(number, ok, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
