"""Core geometry: quaternion rotation, angles, sphere condition, constraint."""

from __future__ import annotations

import numpy as np
import pytest

from spherecal.errors import DegenerateGeometryError, SphereDomainError
from spherecal.geometry import (
    CameraPose,
    InteriorOrientation,
    collinearity_residual,
    corrected_coords,
    incidence_angle,
    quat_conjugate,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_from_rotvec,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    refraction_angle,
    rotate_vectors,
    sphere_z,
    to_camera_frame,
)


def rodrigues_matrix(axis, angle):
    """Independent rotation-matrix oracle (Rodrigues formula, no quaternions)."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def random_unit_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


# -- quaternions -----------------------------------------------------------

def test_quat_normalize_unit_norm():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = quat_normalize(rng.standard_normal(4) * 10)
        assert abs(np.dot(q, q) - 1.0) < 1e-12


def test_quat_sign_irrelevant_for_rotation():
    rng = np.random.default_rng(1)
    for _ in range(20):
        q = random_unit_quat(rng)
        v = rng.standard_normal(3)
        np.testing.assert_allclose(rotate_vectors(q, v), rotate_vectors(-q, v), atol=1e-14)


def test_quat_rotation_matches_rodrigues_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        axis = rng.standard_normal(3)
        angle = rng.uniform(-np.pi, np.pi)
        q = quat_from_axis_angle(axis, angle)
        R = rodrigues_matrix(axis, angle)
        v = rng.standard_normal(3)
        np.testing.assert_allclose(rotate_vectors(q, v), R @ v, atol=1e-12)
        np.testing.assert_allclose(quat_to_matrix(q), R, atol=1e-12)


def test_quat_multiply_composes_rotations():
    rng = np.random.default_rng(3)
    for _ in range(20):
        qa, qb = random_unit_quat(rng), random_unit_quat(rng)
        v = rng.standard_normal(3)
        lhs = rotate_vectors(quat_multiply(qa, qb), v)
        rhs = rotate_vectors(qa, rotate_vectors(qb, v))
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_quat_matrix_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(50):
        q = random_unit_quat(rng)
        q2 = quat_from_matrix(quat_to_matrix(q))
        # same rotation up to sign
        np.testing.assert_allclose(np.abs(np.dot(q, q2)), 1.0, atol=1e-12)


def test_quat_from_rotvec_small_angle_series():
    w = np.array([1e-12, -2e-12, 0.5e-12])
    q = quat_from_rotvec(w)
    np.testing.assert_allclose(q[1:], 0.5 * w, rtol=1e-10)
    assert abs(np.dot(q, q) - 1.0) < 1e-15


def test_quat_conjugate_inverts():
    rng = np.random.default_rng(5)
    q = random_unit_quat(rng)
    v = rng.standard_normal(3)
    back = rotate_vectors(quat_conjugate(q), rotate_vectors(q, v))
    np.testing.assert_allclose(back, v, atol=1e-13)


# -- to_camera_frame -------------------------------------------------------

def test_to_camera_frame_identity():
    pose = CameraPose(q=[1, 0, 0, 0], t=[0, 0, 0])
    np.testing.assert_allclose(to_camera_frame([1.0, 2.0, 3.0], pose), [1, 2, 3], atol=1e-15)


def test_to_camera_frame_z_axis_quarter_turn():
    # active q v q* convention: +90deg about z maps x-axis onto y-axis
    pose = CameraPose(q=quat_from_axis_angle([0, 0, 1], np.pi / 2), t=[0, 0, 0])
    v = to_camera_frame([1.0, 0.0, 0.0], pose)
    np.testing.assert_allclose(v, [0.0, 1.0, 0.0], atol=1e-15)


def test_to_camera_frame_matches_matrix_oracle():
    rng = np.random.default_rng(6)
    for _ in range(100):
        axis = rng.standard_normal(3)
        angle = rng.uniform(-np.pi, np.pi)
        t = rng.standard_normal(3) * 5
        p = rng.standard_normal(3) * 10
        pose = CameraPose(q=quat_from_axis_angle(axis, angle), t=t)
        expected = rodrigues_matrix(axis, angle) @ (p - t)
        np.testing.assert_allclose(to_camera_frame(p, pose), expected, atol=1e-12)


def test_to_camera_frame_isometry():
    rng = np.random.default_rng(7)
    for _ in range(100):
        pose = CameraPose(q=random_unit_quat(rng), t=rng.standard_normal(3))
        p = rng.standard_normal(3) * 20
        v = to_camera_frame(p, pose)
        d = np.linalg.norm(p - pose.t)
        assert abs(np.linalg.norm(v) - d) <= 1e-10 * max(d, 1.0)


# -- incidence angle -------------------------------------------------------

def test_incidence_angle_on_axis():
    assert incidence_angle(np.array([0.0, 0.0, 5.0])) == 0.0


def test_incidence_angle_perpendicular():
    assert abs(incidence_angle(np.array([3.0, 4.0, 0.0])) - np.pi / 2) < 1e-15


def test_incidence_angle_behind_camera():
    assert abs(incidence_angle(np.array([1.0, 0.0, -1.0])) - 3 * np.pi / 4) < 1e-15


def test_incidence_angle_zero_ray_raises():
    with pytest.raises(DegenerateGeometryError, match="degenerate ray"):
        incidence_angle(np.zeros(3))


def test_incidence_angle_scale_invariant():
    rng = np.random.default_rng(8)
    for _ in range(50):
        v = rng.standard_normal(3)
        lam = rng.uniform(0.01, 100)
        assert abs(incidence_angle(v) - incidence_angle(lam * v)) < 1e-14


# -- corrected coords ------------------------------------------------------

def test_corrected_coords_zero_correction():
    iop = InteriorOrientation(c=17.0)
    out = corrected_coords(np.array([1.0, 0.0]), iop)
    np.testing.assert_allclose(out, [1.0, 0.0])


def test_corrected_coords_arithmetic():
    iop = InteriorOrientation(c=17.0, xp=0.5, yp=0.0)
    out = corrected_coords(np.array([2.0, 1.0]), iop, (0.1, 0.2))
    np.testing.assert_allclose(out, [1.4, 0.8])


# -- sphere_z --------------------------------------------------------------

def test_sphere_z_principal_point():
    assert sphere_z(0.0, 0.0, 17.0, +1.0) == 17.0


def test_sphere_z_equator():
    assert sphere_z(17.0, 0.0, 17.0, +1.0) == 0.0


def test_sphere_z_behind_branch_345():
    assert sphere_z(3.0, 4.0, 13.0, -1.0) == -12.0


def test_sphere_z_outside_raises():
    with pytest.raises(SphereDomainError, match="outside spherical image plane"):
        sphere_z(20.0, 1.0, 17.0, +1.0)


# -- refraction angle ------------------------------------------------------

def test_refraction_angle_trivials():
    c = 17.0
    assert refraction_angle(0.0, 0.0, c, +1.0) == 0.0
    assert abs(refraction_angle(c, 0.0, c, +1.0) - np.pi / 2) < 1e-15
    assert abs(refraction_angle(c, 0.0, c, -1.0) - np.pi / 2) < 1e-15


def test_refraction_matches_incidence_on_sphere_image():
    # project rays exactly onto the sphere, then reconstruct the angle
    rng = np.random.default_rng(9)
    c = 17.0
    for _ in range(100):
        v = rng.standard_normal(3)
        v /= np.linalg.norm(v)
        x_t, y_t = c * v[0], c * v[1]
        beta = refraction_angle(x_t, y_t, c, np.sign(v[2]) if v[2] != 0 else 1.0)
        assert abs(beta - incidence_angle(v)) < 1e-10


# -- collinearity residual -------------------------------------------------

def test_residual_zero_for_sphere_consistent_observation():
    rng = np.random.default_rng(10)
    c = 17.0
    for _ in range(100):
        v = rng.standard_normal(3) * rng.uniform(0.5, 20)
        u = v / np.linalg.norm(v)
        g = collinearity_residual(v, c * u[0], c * u[1], c)
        assert abs(g) < 1e-10


def test_residual_finite_at_90_degrees():
    c = 17.0
    g = collinearity_residual(np.array([1.0, 0.0, 0.0]), c, 0.0, c)
    assert g == 0.0
    assert np.isfinite(g)


def test_residual_derivative_matches_finite_differences():
    rng = np.random.default_rng(11)
    c = 17.0
    for _ in range(50):
        # start from a zero-residual configuration, perturb y_true
        v = rng.standard_normal(3)
        v /= np.linalg.norm(v)
        if abs(v[2]) > 0.98 or np.hypot(v[0], v[1]) * c > 0.95 * c:
            continue
        x_t, y_t = c * v[0], c * v[1]
        h = 1e-4
        num = (
            collinearity_residual(v, x_t, y_t + h, c)
            - collinearity_residual(v, x_t, y_t - h, c)
        ) / (2 * h)
        # analytic: dg/dy_true = -y_true*(rho*sz/D + Zc/r)
        rho = np.hypot(v[0], v[1])
        r = np.hypot(x_t, y_t)
        D = np.sqrt(c * c - r * r)
        sz = 1.0 if v[2] >= 0 else -1.0
        ana = -y_t * (rho * sz / D + v[2] / r)
        assert abs(num - ana) <= 1e-6 * max(1.0, abs(ana))


def test_residual_homogeneous_in_ray_scale():
    rng = np.random.default_rng(12)
    c = 17.0
    for _ in range(50):
        v = rng.standard_normal(3)
        x_t, y_t = rng.uniform(-c / 2, c / 2, 2)
        lam = rng.uniform(0.1, 50)
        g1 = collinearity_residual(v, x_t, y_t, c)
        g2 = collinearity_residual(lam * v, x_t, y_t, c)
        assert abs(g2 - lam * g1) <= 1e-9 * max(1.0, abs(lam * g1))


def test_residual_zero_iff_angles_equal():
    rng = np.random.default_rng(13)
    c = 17.0
    for _ in range(300):
        v = rng.standard_normal(3)
        n = np.linalg.norm(v)
        if n < 1e-3:
            continue
        x_t, y_t = rng.uniform(-0.7 * c, 0.7 * c, 2)
        sz = 1.0 if v[2] >= 0 else -1.0
        g = collinearity_residual(v, x_t, y_t, c)
        alpha = incidence_angle(v)
        beta = refraction_angle(x_t, y_t, c, sz)
        if abs(g) < 1e-12:
            assert abs(alpha - beta) < 1e-10
        if abs(alpha - beta) < 1e-12:
            assert abs(g) < 1e-10 * max(1.0, n * c)


def test_residual_behind_camera_sign_selects_branch():
    # 250-degree-FOV style: target behind the camera plane
    rng = np.random.default_rng(14)
    c = 17.0
    for _ in range(50):
        alpha = rng.uniform(np.pi / 2 + 0.05, np.radians(125))
        phi = rng.uniform(0, 2 * np.pi)
        v = np.array([np.sin(alpha) * np.cos(phi), np.sin(alpha) * np.sin(phi), np.cos(alpha)])
        v *= rng.uniform(0.5, 10)
        u = v / np.linalg.norm(v)
        x_t, y_t = c * u[0], c * u[1]
        assert u[2] < 0
        g_correct = collinearity_residual(v, x_t, y_t, c)
        assert abs(g_correct) < 1e-9
        # forcing the front branch must NOT satisfy the constraint
        rho = np.hypot(v[0], v[1])
        r = np.hypot(x_t, y_t)
        g_wrong = rho * np.sqrt(c * c - r * r) - v[2] * r
        assert abs(g_wrong) > 1e-3


def test_angles_in_range_and_finite():
    rng = np.random.default_rng(15)
    c = 17.0
    for _ in range(200):
        v = rng.standard_normal(3)
        if np.linalg.norm(v) < 1e-6:
            continue
        a = incidence_angle(v)
        assert 0 <= a < np.pi and np.isfinite(a)
        x_t, y_t = rng.uniform(-c, c, 2)
        if x_t**2 + y_t**2 > c * c:
            continue
        for sign in (+1.0, -1.0):
            b = refraction_angle(x_t, y_t, c, sign)
            assert 0 <= b < np.pi or abs(b - np.pi) < 1e-12
            assert np.isfinite(b)
        g = collinearity_residual(v, x_t, y_t, c)
        assert np.isfinite(g)
