import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference, rel_err
from rotirs.geometry import (
    angles_from_boresight,
    boresight_jacobian,
    boresight_vector,
    build_geometry,
    euler_rotation,
    euler_rotation_partial,
    irs_element_positions,
    irs_normal,
    project_angles,
    visibility,
    visibility_gradient,
)

RNG = np.random.default_rng(1234)
angle = st.floats(-np.pi / 3, np.pi / 3)


@pytest.mark.parametrize("angles,expected", [
    ((0.0, 1.234), [0, 1, 0]),
    ((np.pi / 2, 0.0), [1, 0, 0]),
    ((np.pi / 4, np.pi / 2), [0, np.sqrt(2) / 2, np.sqrt(2) / 2]),
])
def test_boresight_vector_examples(angles, expected):
    assert np.allclose(boresight_vector(angles), expected, atol=1e-15)


def test_boresight_jacobian_examples():
    assert np.allclose(boresight_jacobian((0.0, 0.0)), [[1, 0], [0, 0], [0, 0]])
    J = boresight_jacobian((np.pi / 4, np.pi / 3))
    f = boresight_vector((np.pi / 4, np.pi / 3))
    assert np.all(np.abs(f @ J) < 1e-12)
    x = np.array([0.5, 1.0])
    assert rel_err(boresight_jacobian(x), central_difference(boresight_vector, x)) < 1e-6


def test_boresight_jacobian_matches_fd_on_random_points():
    for _ in range(50):
        x = np.array([RNG.uniform(1e-3, np.pi / 2 - 1e-3), RNG.uniform(0, 2 * np.pi)])
        assert rel_err(boresight_jacobian(x), central_difference(boresight_vector, x)) < 1e-6


def test_angles_from_boresight_examples():
    assert np.allclose(angles_from_boresight([0, 1, 0]), [0, 0])
    assert np.allclose(angles_from_boresight(boresight_vector((0.7, 2.1))), [0.7, 2.1], atol=1e-12)
    assert np.allclose(angles_from_boresight([1, 0, 0]), [np.pi / 2, 0])


def test_angles_from_boresight_errors():
    with pytest.raises(ValueError):
        angles_from_boresight([0, 2, 0])
    with pytest.raises(ValueError):
        angles_from_boresight(boresight_vector((1.2, 0.3)), theta_max=np.pi / 3)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, np.pi / 3), st.floats(0, 2 * np.pi - 1e-9))
def test_angle_round_trip_on_cap(e, a):
    back = angles_from_boresight(boresight_vector((e, a)), np.pi / 3)
    assert np.allclose(boresight_vector(back), boresight_vector((e, a)), atol=1e-10)
    if e > 1e-6:
        assert abs(back[0] - e) < 1e-10
        assert abs((back[1] - a + np.pi) % (2 * np.pi) - np.pi) < 1e-8


def test_project_angles_clamps_and_wraps():
    out = project_angles(np.array([np.deg2rad(75), 7.0]), np.pi / 3)
    assert np.isclose(out[0], np.pi / 3) and np.isclose(out[1], 7.0 - 2 * np.pi)
    flipped = project_angles(np.array([-0.2, 0.5]), np.pi / 3)
    assert np.allclose(boresight_vector(flipped), boresight_vector((-0.2, 0.5)))


def test_euler_rotation_examples():
    assert np.allclose(euler_rotation(np.zeros(3)), np.eye(3))
    assert np.allclose(euler_rotation((np.pi / 2, 0, 0)), [[0, -1, 0], [1, 0, 0], [0, 0, 1]],
                       atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(angle, angle, angle)
def test_euler_rotation_orthonormal(a, b, p):
    R = euler_rotation((a, b, p))
    assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-12
    assert abs(np.linalg.det(R) - 1) < 1e-12


def test_euler_partial_examples():
    assert np.allclose(euler_rotation_partial(np.zeros(3), 0), [[0, -1, 0], [1, 0, 0], [0, 0, 0]])
    assert np.allclose(euler_rotation_partial(np.zeros(3), 2), [[0, 0, 0], [0, 0, -1], [0, 1, 0]])
    with pytest.raises(ValueError):
        euler_rotation_partial(np.zeros(3), 3)


def test_euler_partials_match_fd():
    for _ in range(100):
        psi = RNG.uniform(-np.pi / 3, np.pi / 3, 3)
        fd = central_difference(euler_rotation, psi)
        for i in range(3):
            assert rel_err(euler_rotation_partial(psi, i), fd[..., i]) < 1e-6


@pytest.fixture(scope="module")
def geom(default_config):
    return build_geometry(default_config)


def test_build_geometry_reference_layout(geom):
    assert geom.num_bs == 16 and geom.num_irs == 441
    # side length and diagonal use lambda = c / f_c (0.04997 m), about 0.07% below 0.5 m
    assert np.isclose(geom.side_length, 0.5, rtol=1e-3)
    assert np.isclose(geom.diagonal, 0.7071, rtol=1e-3)
    assert np.isclose(geom.distance, 6.0)
    assert np.isclose(geom.xi, 0.1179, rtol=2e-3)
    assert np.allclose(geom.ref_normal, [-1 / 3, -2 / 3, -2 / 3])


def test_geometry_invariants(geom):
    assert np.allclose(geom.irs_offsets @ geom.ref_normal, 0, atol=1e-15)
    assert np.allclose(geom.irs_offsets.sum(axis=0), 0, atol=1e-12)
    assert np.allclose(geom.bs_offsets.sum(axis=0), 0, atol=1e-12)
    assert np.allclose(geom.bs_offsets[:, 1], 0)
    spacing = np.unique(np.round(np.diff(np.unique(np.round(geom.bs_offsets[:, 0], 12))), 12))
    assert np.allclose(spacing, geom.wavelength / 2)


def test_irs_positions_and_normal(geom):
    pos = irs_element_positions(geom, np.zeros(3))
    assert np.allclose(pos, geom.irs_center + geom.irs_offsets)
    assert np.allclose(pos.mean(axis=0), geom.irs_center, atol=1e-12)
    assert np.allclose(irs_normal(geom, np.zeros(3)), geom.ref_normal)
    idx = RNG.choice(geom.num_irs, 20, replace=False)
    ref = np.linalg.norm(pos[idx, None] - pos[None, idx], axis=2)
    for _ in range(10):
        psi = RNG.uniform(-np.pi / 3, np.pi / 3, 3)
        p = irs_element_positions(geom, psi)
        n = irs_normal(geom, psi)
        assert np.max(np.abs(np.linalg.norm(p[idx, None] - p[None, idx], axis=2) - ref)) < 1e-12
        assert abs(np.linalg.norm(n) - 1) < 1e-12
        assert np.max(np.abs((p - geom.irs_center) @ n)) < 1e-12


def test_visibility_and_gradient(geom):
    assert np.isclose(visibility(geom, np.zeros(3)), geom.distance)
    for _ in range(20):
        psi = RNG.uniform(-np.pi / 3, np.pi / 3, 3)
        fd = central_difference(lambda x: visibility(geom, x), psi)
        assert rel_err(visibility_gradient(geom, psi), fd) < 1e-6
