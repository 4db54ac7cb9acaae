import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hourglass_pose.errors import MalformedMatrixError, NotARotationError, NotUnitError, ZeroNormError
from hourglass_pose.geometry import (
    Pose,
    angular_error_deg,
    canonicalize_quat,
    homogeneous_to_pose,
    pose_to_homogeneous,
    quat_normalize,
    quat_to_rotmat,
    rotmat_to_quat,
    translation_error_m,
)

from conftest import random_unit_quats

S = math.sqrt(0.5)
finite = st.floats(-1e3, 1e3, allow_nan=False)
quat_arrays = arrays(np.float64, 4, elements=finite).filter(lambda q: np.linalg.norm(q) > 1e-3)


def test_normalize_examples():
    assert np.array_equal(quat_normalize([2, 0, 0, 0]), [1, 0, 0, 0])
    assert np.allclose(quat_normalize([0.6, 0.8, 0, 0]), [0.6, 0.8, 0, 0], atol=1e-15)
    r30 = math.sqrt(30)
    assert np.allclose(quat_normalize([1, 2, 3, 4]), [1 / r30, 2 / r30, 3 / r30, 4 / r30], atol=1e-15)


def test_normalize_zero_raises():
    with pytest.raises(ZeroNormError):
        quat_normalize([0, 0, 0, 0])


@given(quat_arrays)
def test_normalize_unit_and_idempotent(q):
    n = quat_normalize(q)
    assert abs(np.linalg.norm(n) - 1) <= 1e-6
    assert np.allclose(quat_normalize(n), n, rtol=0, atol=1e-12)


def test_rotmat_to_quat_examples():
    assert np.allclose(rotmat_to_quat(np.eye(3)), [1, 0, 0, 0])
    assert np.allclose(rotmat_to_quat(np.diag([-1.0, -1.0, 1.0])), [0, 0, 0, 1])


def test_quat_to_rotmat_examples():
    assert np.allclose(quat_to_rotmat([1, 0, 0, 0]), np.eye(3))
    rx = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float)
    assert np.allclose(quat_to_rotmat([S, S, 0, 0]), rx, atol=1e-12)


def test_quat_to_rotmat_rejects_non_unit():
    with pytest.raises(NotUnitError):
        quat_to_rotmat([1, 1, 0, 0])


def test_rotmat_to_quat_rejects_reflection():
    with pytest.raises(NotARotationError):
        rotmat_to_quat(np.diag([1.0, 1.0, -1.0]))


def test_round_trip_1000(rng):
    for q in random_unit_quats(rng, 1000):
        R = quat_to_rotmat(q)
        assert np.abs(R.T @ R - np.eye(3)).max() <= 1e-10
        assert np.abs(rotmat_to_quat(R) - q).max() <= 1e-6


def test_rotmat_to_quat_against_scipy(rng):
    # independent implementation; scipy orders quaternions (x, y, z, w)
    from scipy.spatial.transform import Rotation

    for R in Rotation.random(200, random_state=7).as_matrix():
        xyzw = Rotation.from_matrix(R).as_quat()
        ref = canonicalize_quat(np.r_[xyzw[3], xyzw[:3]])
        assert np.allclose(rotmat_to_quat(R), ref, atol=1e-9)


def test_angular_error_examples(rng):
    q = random_unit_quats(rng, 1)[0]
    assert angular_error_deg(q, q) == pytest.approx(0, abs=1e-6)
    assert angular_error_deg(q, -q) == pytest.approx(0, abs=1e-6)
    assert angular_error_deg([1, 0, 0, 0], [S, S, 0, 0]) == pytest.approx(90, abs=1e-6)


def test_angular_error_matches_arccos_form(rng):
    a, b = random_unit_quats(rng, 500), random_unit_quats(rng, 500)
    ref = np.degrees(2 * np.arccos(np.clip(np.abs(np.sum(a * b, axis=1)), 0, 1)))
    assert np.allclose(angular_error_deg(a, b), ref, atol=1e-6)


def test_angular_error_metric_axioms(rng):
    a, b, c = (random_unit_quats(rng, 300) for _ in range(3))
    ab, ba = angular_error_deg(a, b), angular_error_deg(b, a)
    assert np.all(ab >= 0)
    assert np.array_equal(ab, ba)
    assert np.all(ab <= angular_error_deg(a, c) + angular_error_deg(c, b) + 1e-6)
    assert np.array_equal(angular_error_deg(-a, b), ab)


def test_translation_error_examples():
    t = np.array([0.3, -1.0, 2.0])
    assert translation_error_m(t, t) == 0
    assert translation_error_m([0, 0, 0], [1, 0, 0]) == 1.0
    assert translation_error_m([1, 2, 3], [4, 6, 3]) == 5.0


def test_homogeneous_examples():
    p = homogeneous_to_pose(np.eye(4))
    assert np.array_equal(p.q, [1, 0, 0, 0]) and np.array_equal(p.t, [0, 0, 0])
    M = np.eye(4)
    M[:3, 3] = [1, 2, 3]
    p = homogeneous_to_pose(M)
    assert np.array_equal(p.q, [1, 0, 0, 0]) and np.array_equal(p.t, [1, 2, 3])


def test_homogeneous_round_trip(rng):
    for q in random_unit_quats(rng, 100):
        M = pose_to_homogeneous(Pose(q, rng.normal(size=3)))
        p = homogeneous_to_pose(M)
        assert np.abs(quat_to_rotmat(p.q) - M[:3, :3]).max() <= 1e-6
        assert np.allclose(p.t, M[:3, 3])


@pytest.mark.parametrize("bad", [np.eye(3), np.vstack([np.eye(4)[:3], [0, 0, 1, 1]])])
def test_homogeneous_rejects_malformed(bad):
    with pytest.raises(MalformedMatrixError):
        homogeneous_to_pose(bad)


@settings(max_examples=200)
@given(quat_arrays)
def test_canonical_form_has_nonnegative_w(q):
    c = canonicalize_quat(quat_normalize(q))
    assert c[0] >= 0
