import numpy as np
import pytest

from app.services import quaternion_service as quat
from app.utils.errors import DegenerateQuaternion


def _rot_x(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    return np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])


def test_identity_rotation_leaves_vector():
    assert np.allclose(quat.rotate_vec(quat.IDENTITY, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_rotate_vec_matches_rotation_matrix(rng):
    v = rng.normal(size=3)
    q = quat.from_axis_angle([1.0, 0.0, 0.0], np.deg2rad(40.0))
    assert np.allclose(quat.rotate_vec(q, v), _rot_x(40.0) @ v, atol=1e-12)


def test_multiply_composes_rotations(rng):
    a, b = quat.normalize(rng.normal(size=(2, 1000, 4)))
    v = rng.normal(size=(1000, 3))
    assert np.allclose(quat.rotate_vec(quat.multiply(a, b), v), quat.rotate_vec(a, quat.rotate_vec(b, v)))


def test_inverse_undoes_rotation(rng):
    q = quat.normalize(rng.normal(size=(1000, 4)))
    assert np.allclose(quat.multiply(q, quat.inverse(q)), quat.IDENTITY, atol=1e-12)
    assert np.allclose(quat.multiply(quat.inverse(q), q), quat.IDENTITY, atol=1e-12)


def test_multiply_is_associative(rng):
    a, b, c = quat.normalize(rng.normal(size=(3, 1000, 4)))
    left = quat.multiply(quat.multiply(a, b), c)
    right = quat.multiply(a, quat.multiply(b, c))
    assert np.allclose(left, right, atol=1e-12)


def test_rotation_preserves_length(rng):
    q = quat.normalize(rng.normal(size=(1000, 4)))
    v = rng.normal(size=(1000, 3))
    assert np.allclose(np.linalg.norm(quat.rotate_vec(q, v), axis=-1), np.linalg.norm(v, axis=-1))


def test_slerp_of_coincident_endpoints(rng):
    q = quat.normalize(rng.normal(size=4))
    assert np.allclose(quat.slerp(q, q, 0.5), q)


def test_slerp_halfway_angle():
    a = quat.IDENTITY
    b = quat.yaw_quat(np.deg2rad(90.0))
    mid = quat.slerp(a, b, 0.5)
    assert np.allclose(mid, quat.yaw_quat(np.deg2rad(45.0)), atol=1e-12)


def test_slerp_takes_short_arc():
    a = quat.yaw_quat(0.1)
    b = -quat.yaw_quat(0.3)
    assert np.allclose(quat.canonicalize(quat.slerp(a, b, 0.5)), quat.yaw_quat(0.2), atol=1e-12)


def test_slerp_rejects_parameter_outside_unit_interval():
    with pytest.raises(ValueError):
        quat.slerp(quat.IDENTITY, quat.IDENTITY, 1.5)


def test_pitch_of_rotation_about_x():
    q = quat.from_axis_angle([1.0, 0.0, 0.0], np.deg2rad(30.0))
    assert np.rad2deg(quat.pitch_of(q)) == pytest.approx(30.0, abs=1e-6)


@pytest.mark.parametrize("deg", [-170.0, -45.0, 0.0, 90.0, 135.0])
def test_yaw_of_pure_yaw(deg):
    assert np.rad2deg(quat.yaw_of(quat.yaw_quat(np.deg2rad(deg)))) == pytest.approx(deg, abs=1e-9)


def test_normalize_rejects_zero_quaternion():
    with pytest.raises(DegenerateQuaternion):
        quat.normalize([0.0, 0.0, 0.0, 0.0])


def test_normalize_scales_to_unit():
    assert np.allclose(quat.normalize([0.0, 0.0, 0.0, 2.0]), quat.IDENTITY)


def test_align_signs_makes_neighbours_agree(rng):
    q = quat.normalize(rng.normal(size=(50, 4)))
    flips = np.where(rng.random(50) < 0.5, -1.0, 1.0)[:, None]
    aligned = quat.align_signs(q * flips)
    assert np.all(np.sum(aligned[1:] * aligned[:-1], axis=-1) >= 0.0)
    # each element keeps its rotation (same up to sign)
    assert np.allclose(np.abs(np.sum(aligned * q, axis=-1)), 1.0)
