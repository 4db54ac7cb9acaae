"""Finite-difference verification of the network's analytic gradients.

Central differences are only meaningful where the loss is smooth along the
probed coordinate. A perturbation that flips a ReLU mask or moves a max-pool
winner straddles a kink; such probes are detected by comparing the
piecewise-linear switching pattern at ``theta - h``, ``theta`` and
``theta + h`` and are replaced by fresh samples.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .loss import batch_loss_and_grad
from .nn import BatchNorm, Conv2d, Linear, MaxPool2d, ReLU, UpConv2d


@dataclass
class GradCheckReport:
    step: float
    rtol: float
    floor: float
    checked: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    skipped_kinks: dict = field(default_factory=dict)
    worst: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not any(self.failures.values())


def layer_type_groups(model):
    """Map layer type name -> list of parameter names belonging to layers of that type."""
    groups = OrderedDict()
    upconv_convs = {id(m.conv) for _, m in model.modules() if isinstance(m, UpConv2d)}
    for path, m in model.modules():
        if isinstance(m, Conv2d):
            kind = "upconv2d" if id(m) in upconv_convs else "conv2d"
        elif isinstance(m, Linear):
            kind = "linear"
        elif isinstance(m, BatchNorm):
            kind = "batchnorm"
        else:
            continue
        for key in m.params:
            groups.setdefault(kind, []).append(f"{path}.{key}")
    return groups


def _switch_pattern(model):
    pats = []
    for _, m in model.modules():
        if isinstance(m, (ReLU, MaxPool2d)) and m._cache is not None:
            pats.append(np.array(m._cache[0] if isinstance(m, MaxPool2d) else m._cache, copy=True))
    return pats


def _same(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_model_gradients(model, images, q, t, beta=1.0, mode="train", n_per_type=200,
                          step=1e-3, rtol=1e-4, floor=1e-8, seed=0, dropout_seed=0, max_tries=20):
    """Compare backprop gradients with central differences on sampled parameters.

    The model should hold float64 parameters. Relative error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``. Returns a
    :class:`GradCheckReport`.
    """
    rng = np.random.default_rng(seed)
    buffers = OrderedDict((k, v.copy()) for k, v in model.named_buffers())

    def evaluate(backward=False):
        drop_rng = np.random.default_rng(dropout_seed)
        pred = model.forward(images, mode, drop_rng)
        value, gq, gt = batch_loss_and_grad(pred.q_raw, pred.t, q, t, beta)
        pats = _switch_pattern(model)
        if backward:
            model.zero_grad()
            model.backward(gq, gt)
        for k, v in model.named_buffers():
            v[...] = buffers[k]
        return value.total, pats

    _, base_pat = evaluate(backward=True)
    params = model.parameter_store()
    grads = OrderedDict((k, v.copy()) for k, v in model.gradient_store().items())
    report = GradCheckReport(step=step, rtol=rtol, floor=floor)
    for kind, names in layer_type_groups(model).items():
        sizes = np.array([params[n].size for n in names])
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        total = int(offsets[-1])
        order = rng.permutation(total)
        checked = fails = skipped = 0
        worst = 0.0
        for flat in order:
            if checked >= min(n_per_type, total) or skipped > max_tries * n_per_type:
                break
            j = int(np.searchsorted(offsets, flat, side="right") - 1)
            name, i = names[j], int(flat - offsets[j])
            arr = params[name].reshape(-1)
            orig = arr[i]
            arr[i] = orig + step
            lp, pp = evaluate()
            arr[i] = orig - step
            lm, pm = evaluate()
            arr[i] = orig
            if not (_same(pp, base_pat) and _same(pm, base_pat)):
                skipped += 1
                continue
            num = (lp - lm) / (2 * step)
            ana = grads[name].reshape(-1)[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, rel)
            fails += rel > rtol
            checked += 1
        report.checked[kind] = checked
        report.failures[kind] = int(fails)
        report.skipped_kinks[kind] = skipped
        report.worst[kind] = worst
    return report
