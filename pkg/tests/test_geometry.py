import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_rotation, random_triangle
from splatrig.errors import DegenerateTriangle
from splatrig.geometry import (axis_angle_to_quat, frame_jacobians, frame_vjp, matrix_to_quat,
                               quat_to_matrix, quat_to_matrix_vjp, triangle_frame)


def test_unit_right_triangle_frame():
    f = triangle_frame([0, 0, 0], [1, 0, 0], [0, 1, 0])
    np.testing.assert_allclose(f.origin, [1 / 3, 1 / 3, 0])
    np.testing.assert_allclose(f.orientation[:, 0], [1, 0, 0])
    np.testing.assert_allclose(f.orientation[:, 1], [0, 0, 1])
    np.testing.assert_allclose(f.orientation[:, 2], [0, -1, 0])
    assert f.scale == pytest.approx(1.0)
    assert np.linalg.det(f.orientation) == pytest.approx(1.0)


def test_uniform_scaling():
    rng = np.random.default_rng(0)
    v = random_triangle(rng)
    f = triangle_frame(*v)
    g = triangle_frame(*(2.5 * v))
    np.testing.assert_allclose(g.orientation, f.orientation, atol=1e-12)
    np.testing.assert_allclose(g.origin, 2.5 * f.origin, atol=1e-12)
    assert g.scale == pytest.approx(2.5 * f.scale, rel=1e-12)


def test_rigid_equivariance():
    rng = np.random.default_rng(1)
    for _ in range(50):
        v = random_triangle(rng)
        Q = random_rotation(rng)
        t = rng.standard_normal(3)
        f = triangle_frame(*v)
        g = triangle_frame(*(v @ Q.T + t))
        np.testing.assert_allclose(g.orientation, Q @ f.orientation, atol=1e-12)
        np.testing.assert_allclose(g.origin, Q @ f.origin + t, atol=1e-12)
        assert abs(g.scale - f.scale) < 1e-12


def test_orthonormal_for_many_triangles():
    rng = np.random.default_rng(2)
    v = rng.standard_normal((10_000, 3, 3))
    f = triangle_frame(v[:, 0], v[:, 1], v[:, 2])
    RtR = np.einsum("nji,njk->nik", f.orientation, f.orientation)
    assert np.abs(RtR - np.eye(3)).max() < 1e-6
    assert np.abs(np.linalg.det(f.orientation) - 1).max() < 1e-6
    assert np.all(f.scale > 0)


def test_batched_matches_scalar():
    rng = np.random.default_rng(3)
    v = rng.standard_normal((20, 3, 3))
    f = triangle_frame(v[:, 0], v[:, 1], v[:, 2])
    for i in range(20):
        g = triangle_frame(*v[i])
        np.testing.assert_array_equal(f.origin[i], g.origin)
        np.testing.assert_array_equal(f.orientation[i], g.orientation)
        assert f.scale[i] == g.scale


def test_degenerate_raises():
    with pytest.raises(DegenerateTriangle):
        triangle_frame([0, 0, 0], [1, 0, 0], [2, 0, 0])
    with pytest.raises(DegenerateTriangle) as exc:
        v = np.zeros((3, 3, 3))
        v[:, 1, 0] = 1
        v[:, 2, 1] = 1
        v[1, 2] = [3, 0, 0]
        triangle_frame(v[:, 0], v[:, 1], v[:, 2])
    assert list(exc.value.indices) == [1]


def _flat_frame(x):
    f = triangle_frame(x[0:3], x[3:6], x[6:9])
    return f.origin, f.orientation, f.scale


def test_jacobian_simple_cases():
    rng = np.random.default_rng(4)
    v = random_triangle(rng)
    jac = frame_jacobians(*v)
    np.testing.assert_allclose(jac.d_origin[:, 0:3], np.eye(3) / 3)
    # k is invariant to translating all three vertices together
    shift = np.tile(np.eye(3), 3)
    np.testing.assert_allclose(jac.d_scale @ shift.T, 0, atol=1e-12)


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = random_triangle(rng).ravel()
        jac = frame_jacobians(x[0:3], x[3:6], x[6:9])
        h = 1e-5
        for k in range(9):
            d = np.zeros(9)
            d[k] = h
            (op, Rp, kp), (om, Rm, km) = _flat_frame(x + d), _flat_frame(x - d)
            for num, ana in (((op - om) / (2 * h), jac.d_origin[:, k]),
                             ((Rp - Rm) / (2 * h), jac.d_orientation[:, :, k]),
                             ((kp - km) / (2 * h), jac.d_scale[k])):
                err = np.abs(num - ana).max() / max(np.abs(ana).max(), 1e-3)
                assert err < 1e-7


def test_frame_vjp_is_jacobian_transpose():
    rng = np.random.default_rng(6)
    v = random_triangle(rng)
    go, gR, gk = rng.standard_normal(3), rng.standard_normal((3, 3)), rng.standard_normal()
    jac = frame_jacobians(*v)
    expect = go @ jac.d_origin + np.einsum("ij,ijk->k", gR, jac.d_orientation) + gk * jac.d_scale
    got = np.concatenate(frame_vjp(*v, go, gR, gk))
    np.testing.assert_allclose(got, expect, atol=1e-12)


def test_quaternion_round_trip_and_vjp():
    rng = np.random.default_rng(7)
    for _ in range(20):
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        q *= np.sign(q[0])
        R = quat_to_matrix(q)
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        q2 = matrix_to_quat(R)
        np.testing.assert_allclose(q2 * np.sign(q2[0]), q, atol=1e-10)
    # the vjp accounts for normalisation of non-unit input
    q = rng.standard_normal(4) * 1.7
    G = rng.standard_normal((3, 3))
    g = quat_to_matrix_vjp(q, G)
    h = 1e-6
    num = [(np.sum(G * quat_to_matrix(q + h * e)) - np.sum(G * quat_to_matrix(q - h * e))) / (2 * h)
           for e in np.eye(4)]
    np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-8)


def test_axis_angle():
    q = axis_angle_to_quat([0, 0, 1], np.pi / 2)
    np.testing.assert_allclose(quat_to_matrix(q) @ [1, 0, 0], [0, 1, 0], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=9, max_size=9),
       st.floats(0.1, 10))
def test_property_homogeneity(coords, c):
    v = np.array(coords).reshape(3, 3)
    area = 0.5 * np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0]))
    if area < 1e-3 or np.linalg.norm(v[1] - v[0]) < 1e-3:
        return
    f, g = triangle_frame(*v), triangle_frame(*(c * v))
    np.testing.assert_allclose(g.orientation, f.orientation, atol=1e-8)
    assert g.scale == pytest.approx(c * f.scale, rel=1e-9)
