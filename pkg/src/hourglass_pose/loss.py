"""Weighted translation + orientation objective.

    total = ||t - t_hat|| + beta * ||q - q_hat / ||q_hat||||

Both norms are plain (unsquared) Euclidean norms. At a norm of exactly zero
the gradient of that term is taken to be zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatchError, InvalidConfigError, NonUnitTargetError, ShapeMismatchError, ZeroNormError
from .geometry import ZERO_NORM_EPS

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class LossParams:
    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidConfigError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class LossValue:
    total: float
    translation_term: float
    orientation_term: float
    beta_used: float


def _terms(q_raw, t_hat, q, t):
    q_raw = np.asarray(q_raw, dtype=np.float64)
    t_hat = np.asarray(t_hat, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if q_raw.shape[-1] != 4 or q.shape[-1] != 4 or t_hat.shape[-1] != 3 or t.shape[-1] != 3:
        raise ShapeMismatchError("expected quaternions (..., 4) and translations (..., 3)")
    if q_raw.shape[:-1] != q.shape[:-1] or t_hat.shape[:-1] != t.shape[:-1] or q.shape[:-1] != t.shape[:-1]:
        raise ShapeMismatchError("prediction and target batch shapes differ")
    if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > UNIT_TOL):
        raise NonUnitTargetError("target quaternion is not unit-norm")
    qn = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    if np.any(~(qn > ZERO_NORM_EPS)):
        raise ZeroNormError("predicted quaternion has (near) zero norm")
    u = q_raw / qn
    dt = t - t_hat
    dq = q - u
    lt = np.linalg.norm(dt, axis=-1)
    lq = np.linalg.norm(dq, axis=-1)
    return u, qn, dt, dq, lt, lq


def pose_loss(pred, target, params=LossParams()):
    """Loss for a single prediction (``pred.q_raw`` shape ``(4,)``) against a :class:`Pose`."""
    _, _, _, _, lt, lq = _terms(np.reshape(pred.q_raw, 4), np.reshape(pred.t, 3), target.q, target.t)
    lt, lq = float(lt), float(lq)
    return LossValue(lt + params.beta * lq, lt, lq, params.beta)


def batch_loss_and_grad(q_raw, t_hat, q, t, beta):
    """Mean loss over a batch and its gradient with respect to ``(q_raw, t_hat)``.

    Arrays are ``(N, 4)``, ``(N, 3)``, ``(N, 4)``, ``(N, 3)``. Returns
    ``(LossValue, dq_raw, dt_hat)``.
    """
    q_raw = np.asarray(q_raw, dtype=np.float64)
    if q_raw.ndim != 2 or len(q_raw) == 0:
        raise EmptyBatchError("batch must hold at least one sample")
    n = len(q_raw)
    u, qn, dt, dq, lt, lq = _terms(q_raw, t_hat, q, t)
    with np.errstate(invalid="ignore", divide="ignore"):
        gt = np.where(lt[:, None] > 0, -dt / lt[:, None], 0.0)
        r = np.where(lq[:, None] > 0, dq / lq[:, None], 0.0)
    # d||q - u|| / du = -r ; du / dq_raw = (I - u u^T) / ||q_raw||
    gq = -(r - u * np.sum(u * r, axis=-1, keepdims=True)) / qn
    mt, mq = float(lt.mean()), float(lq.mean())
    value = LossValue(float(np.mean(lt + beta * lq)), mt, mq, float(beta))
    return value, beta * gq / n, gt / n


def batch_pose_loss(preds, targets, params=LossParams()):
    """Mean of per-sample losses.

    ``preds`` is a :class:`~hourglass_pose.model.PosePrediction` with batch
    arrays, or a sequence of single-sample predictions; ``targets`` is a
    sequence of :class:`~hourglass_pose.geometry.Pose`.
    """
    if isinstance(preds, (list, tuple)):
        if not preds:
            raise EmptyBatchError("empty batch")
        preds = type(preds[0])(np.stack([p.q_raw for p in preds]), np.stack([p.t for p in preds]))
    if len(targets) == 0 or len(preds.q_raw) == 0:
        raise EmptyBatchError("empty batch")
    if len(targets) != len(preds.q_raw):
        raise ShapeMismatchError(f"{len(preds.q_raw)} predictions for {len(targets)} targets")
    q = np.stack([p.q for p in targets])
    t = np.stack([p.t for p in targets])
    value, _, _ = batch_loss_and_grad(preds.q_raw, preds.t, q, t, params.beta)
    return value
