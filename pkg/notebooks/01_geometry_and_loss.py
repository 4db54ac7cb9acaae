"""Quaternions, pose errors and the regression loss
=================================================

A walk through the small geometric toolkit the network is trained against.
Run with ``python3 notebooks/01_geometry_and_loss.py``.
"""

import numpy as np

from hourglass_pose import LossParams, Pose, PosePrediction, angular_error_deg, pose_loss
from hourglass_pose.geometry import quat_to_rotmat, rotmat_to_quat

# a rotation of 90 degrees about z, written as (w, x, y, z)
q = np.array([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)])
R = quat_to_rotmat(q)
print(np.round(R, 6))

# back to a quaternion; the scalar part always comes out non-negative
print(rotmat_to_quat(R))
print(rotmat_to_quat(quat_to_rotmat(-q)))

# q and -q are the same rotation, so their angular distance is zero
print(angular_error_deg(q, -q))
print(angular_error_deg([1, 0, 0, 0], q))

###############################################################################
# The loss
# --------
# Translation error plus beta times the distance between the target
# quaternion and the *normalized* predicted one. The raw quaternion head
# output is not unit length, and its scale does not matter.

target = Pose([1, 0, 0, 0], [1.0, 2.0, 3.0])
pred = PosePrediction(q_raw=np.array([3.0, 0, 0, 0]), t=np.array([1.0, 2.0, 4.0]))
print(pose_loss(pred, target, LossParams(beta=3.0)))

pred = PosePrediction(q_raw=np.array([1.0, 1.0, 0, 0]), t=np.array([1.0, 2.0, 3.0]))
value = pose_loss(pred, target, LossParams(beta=3.0))
print(value.total, 3.0 * np.linalg.norm([1 - 2**-0.5, -(2**-0.5), 0, 0]))

# The loss is not sign-symmetric. A prediction of -q is a perfect rotation
# but costs 2 * beta, and the gradient there is zero, so training can sit
# on the wrong hemisphere. The error metric does not care.
pred = PosePrediction(q_raw=-target.q, t=target.t)
print(pose_loss(pred, target).total, angular_error_deg(-target.q, target.q))
