"""Pose representation and the error metrics used at evaluation time.

Conventions
-----------
- Quaternions are length-4 arrays ordered ``(w, x, y, z)``.
- Canonical quaternions have ``w >= 0``; when ``w == 0`` the first nonzero
  of ``x, y, z`` is made positive.
- Translations are length-3 arrays in meters.
- Homogeneous matrices are 4x4, rotation in the upper-left 3x3 block and
  translation in the last column.

The vectorised helpers (``quat_normalize``, ``angular_error_deg``,
``translation_error_m``) accept arrays with arbitrary leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MalformedMatrixError, NotARotationError, NotUnitError, ZeroNormError

ZERO_NORM_EPS = 1e-12


@dataclass(frozen=True)
class Pose:
    """Camera pose: unit quaternion ``q`` (w, x, y, z) and translation ``t``."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64).reshape(4)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    def as_vector(self):
        """7-vector ``[q, t]``."""
        return np.concatenate([self.q, self.t])


def quat_normalize(q):
    """Scale ``q`` (shape ``(..., 4)``) to unit length.

    Raises :class:`ZeroNormError` if any quaternion has norm <= 1e-12,
    which for network outputs signals a degenerate prediction.
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(~(n > ZERO_NORM_EPS)):
        raise ZeroNormError(f"quaternion norm {n.min():.3g} is too small to normalize")
    return q / n


def canonicalize_quat(q):
    """Flip the sign of a single quaternion so that ``w >= 0``.

    Ties at ``w == 0`` are broken by the first nonzero of ``x, y, z``.
    """
    q = np.array(q, dtype=np.float64)
    for c in q:
        if c != 0.0:
            return -q if c < 0.0 else q
    return q


def quat_to_rotmat(q, tol=1e-6):
    """Rotation matrix of a unit quaternion; ``q`` and ``-q`` give the same matrix."""
    q = np.asarray(q, dtype=np.float64).reshape(4)
    if abs(np.linalg.norm(q) - 1.0) > tol:
        raise NotUnitError(f"quaternion norm {np.linalg.norm(q):.9g} is not 1")
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _check_rotation(R, tol):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise NotARotationError(f"expected a finite 3x3 matrix, got shape {R.shape}")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol or np.linalg.det(R) < 0:
        raise NotARotationError(
            f"matrix is not a proper rotation (|R^T R - I| = {err:.3g}, det = {np.linalg.det(R):.3g})"
        )
    return R


def rotmat_to_quat(R, tol=1e-3):
    """Canonical unit quaternion of a rotation matrix.

    Branches on the largest of ``trace, R00, R11, R22`` so that the square
    root is always taken of a quantity >= 1, which keeps rotations near 180
    degrees accurate.
    """
    R = _check_rotation(R, tol)
    tr = np.trace(R)
    d = np.diag(R)
    k = int(np.argmax([tr, d[0], d[1], d[2]]))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + d[0] - d[1] - d[2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + d[1] - d[0] - d[2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + d[2] - d[0] - d[1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    return canonicalize_quat(q / np.linalg.norm(q))


def angular_error_deg(q1, q2):
    """Rotation angle in degrees between the rotations of ``q1`` and ``q2``.

    Both inputs are normalized first. The value equals
    ``2 * arccos(min(1, |<q1, q2>|))`` converted to degrees, evaluated as
    ``4 * atan2(|a - b|, |a + b|)`` with ``b`` moved to ``a``'s hemisphere,
    which stays accurate for tiny angles where ``arccos`` loses half the
    significant digits.
    """
    a = quat_normalize(q1)
    b = quat_normalize(q2)
    a, b = np.broadcast_arrays(a, b)
    dot = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(dot < 0, -b, b)
    diff = np.linalg.norm(a - b, axis=-1)
    summ = np.linalg.norm(a + b, axis=-1)
    theta = 4.0 * np.arctan2(diff, summ)
    out = np.degrees(np.minimum(theta, np.pi))
    return float(out) if out.ndim == 0 else out


def translation_error_m(t1, t2):
    """Euclidean distance between translations (shape ``(..., 3)``)."""
    d = np.linalg.norm(np.asarray(t1, dtype=np.float64) - np.asarray(t2, dtype=np.float64), axis=-1)
    return float(d) if d.ndim == 0 else d


def homogeneous_to_pose(M, tol=1e-3):
    """Split a 4x4 rigid transform into a canonical :class:`Pose`."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (4, 4) or not np.all(np.isfinite(M)):
        raise MalformedMatrixError(f"expected a finite 4x4 matrix, got shape {M.shape}")
    if np.abs(M[3] - [0.0, 0.0, 0.0, 1.0]).max() > tol:
        raise MalformedMatrixError(f"bottom row {M[3].tolist()} is not (0, 0, 0, 1)")
    try:
        q = rotmat_to_quat(M[:3, :3], tol=tol)
    except NotARotationError as exc:
        raise MalformedMatrixError(str(exc)) from exc
    return Pose(q=q, t=M[:3, 3].copy())


def pose_to_homogeneous(pose):
    M = np.eye(4)
    M[:3, :3] = quat_to_rotmat(pose.q)
    M[:3, 3] = pose.t
    return M
