"""Fast property checks runnable without pytest (``hgpose selftest``)."""

from __future__ import annotations

import math

import numpy as np

from .evaluation import cumulative_histogram, median, plain_histogram
from .geometry import angular_error_deg, canonicalize_quat, quat_normalize, quat_to_rotmat, rotmat_to_quat
from .gradcheck import check_model_gradients
from .loss import LossParams, pose_loss
from .model import ModelConfig, PosePrediction, build_model
from .geometry import Pose


def _random_unit_quats(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return np.array([canonicalize_quat(v) for v in q])


def check_quaternion_round_trip(rng):
    worst = 0.0
    for q in _random_unit_quats(rng, 1000):
        worst = max(worst, np.abs(rotmat_to_quat(quat_to_rotmat(q)) - q).max())
    return worst <= 1e-6, f"max component error {worst:.2e}"


def check_angular_error(rng):
    q = _random_unit_quats(rng, 200)
    p = _random_unit_quats(rng, 200)
    same = np.max(angular_error_deg(q, q))
    flip = np.max(angular_error_deg(q, -q))
    sign = np.max(np.abs(angular_error_deg(q, p) - angular_error_deg(-q, p)))
    ninety = angular_error_deg([1, 0, 0, 0], [math.sqrt(0.5), math.sqrt(0.5), 0, 0])
    ok = same <= 1e-6 and flip <= 1e-6 and sign == 0.0 and abs(ninety - 90.0) <= 1e-6
    return ok, f"q/q {same:.1e}, q/-q {flip:.1e}, 90deg case {ninety:.9f}"


def check_loss_oracle(rng, n=10000):
    worst = 0.0
    for _ in range(n):
        q = quat_normalize(rng.normal(size=4))
        qh = rng.normal(size=4)
        t, th = rng.normal(size=3), rng.normal(size=3)
        beta = rng.uniform(1, 10)
        v = pose_loss(PosePrediction(qh, th), Pose(q, t), LossParams(beta))
        nq = math.sqrt(sum(c * c for c in qh))
        lt = math.sqrt(sum((a - b) ** 2 for a, b in zip(t, th)))
        lq = math.sqrt(sum((a - b / nq) ** 2 for a, b in zip(q, qh)))
        worst = max(worst, abs(v.total - (lt + beta * lq)))
    return worst <= 1e-9, f"max |loss - scalar oracle| {worst:.2e} over {n} draws"


def check_histograms(rng):
    x = rng.exponential(size=500)
    edges = np.linspace(0, 3, 31)
    cdf = cumulative_histogram(x, edges).cdf
    h = plain_histogram(x, edges)
    ok = np.all(np.diff(cdf) >= 0) and 0 <= cdf.min() and cdf.max() <= 1 and abs(h.sum() - 1) < 1e-12
    ok = ok and median(rng.permutation(x)) == median(x)
    return bool(ok), "cdf monotone and bounded, histogram sums to 1, median permutation-invariant"


def check_gradients(rng, n_per_type=20):
    cfg = ModelConfig.tiny(variant="sum", input_hw=(32, 32))
    model = build_model(cfg, seed=int(rng.integers(1 << 31)), dtype=np.float64)
    x = rng.uniform(-3, 3, size=(8, 3, 32, 32))
    q = quat_normalize(rng.normal(size=(8, 4)))
    t = rng.normal(size=(8, 3))
    rep = check_model_gradients(model, x, q, t, mode="train", n_per_type=n_per_type, step=1e-5, floor=1e-6,
                                seed=int(rng.integers(1 << 31)))
    worst = max(rep.worst.values())
    return rep.ok, f"worst relative error {worst:.2e} on {sum(rep.checked.values())} parameters"


CHECKS = [
    ("quaternion round trip", check_quaternion_round_trip),
    ("angular error identities", check_angular_error),
    ("loss vs scalar oracle", check_loss_oracle),
    ("histogram/median properties", check_histograms),
    ("backprop vs finite differences", check_gradients),
]


def run(seed=0, out=print):
    """Run every check; returns True when all pass."""
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn(rng)
        all_ok &= bool(ok)
        out(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
