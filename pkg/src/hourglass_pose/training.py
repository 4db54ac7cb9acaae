"""Optimization loop: staged learning rate, Adam with coupled weight decay, checkpoints.

A run directory holds ``config.json``, ``log.csv`` and, every
``checkpoint_every`` epochs, ``ckpt-<epoch>.hgp`` (model) plus
``optim-<epoch>.hgp`` (Adam moments). All randomness is derived from
``(seed, epoch, batch)`` so a resumed run replays the uninterrupted one
exactly.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import read_tensors, save_checkpoint, write_tensors
from .data import ImageCache, PreprocessConfig, epoch_batches, make_batch
from .errors import NonFiniteLossError, OutOfRangeError, ShapeMismatchError
from .loss import batch_loss_and_grad

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "lr", "loss_total", "loss_t", "loss_q")


@dataclass
class TrainConfig:
    lr_stages: list = field(default_factory=lambda: [(1e-3, 50), (1e-4, 40), (1e-5, 30)])
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_epsilon: float = 1e-8
    weight_decay: float = 1e-5
    batch_size: int = 40
    loss_beta: float = 3.0
    dropout_prob: float = 0.5
    seed: int = 0
    checkpoint_every: int = 10

    def __post_init__(self):
        self.lr_stages = [(float(lr), int(n)) for lr, n in self.lr_stages]
        if any(lr < 0 or n < 0 for lr, n in self.lr_stages):
            raise ValueError("learning rates and stage lengths must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def total_epochs(self):
        return sum(n for _, n in self.lr_stages)

    def to_dict(self):
        d = asdict(self)
        d["lr_stages"] = [list(s) for s in self.lr_stages]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def lr_at(config, epoch):
    """Learning rate of 0-based ``epoch`` under the piecewise-constant schedule."""
    if epoch < 0:
        raise OutOfRangeError(f"epoch {epoch} is negative")
    start = 0
    for lr, n in config.lr_stages:
        if epoch < start + n:
            return lr
        start += n
    raise OutOfRangeError(f"epoch {epoch} is past the last scheduled epoch ({start - 1})")


def truncate_stages(stages, epochs):
    """First ``epochs`` epochs of a stage list."""
    out, left = [], epochs
    for lr, n in stages:
        take = min(n, left)
        if take > 0:
            out.append((lr, take))
        left -= take
    if left > 0:
        lr = stages[-1][0] if stages else 1e-3
        out.append((lr, left))
    return out


@dataclass
class AdamMoments:
    m: OrderedDict
    v: OrderedDict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(
            m=OrderedDict((k, np.zeros_like(p)) for k, p in params.items()),
            v=OrderedDict((k, np.zeros_like(p)) for k, p in params.items()),
        )


def adam_step(params, grads, moments, lr, config, decay_names=()):
    """One bias-corrected Adam update, in place on ``params`` and ``moments``.

    ``decay_names`` lists parameters that receive L2 weight decay
    (``grad + weight_decay * param``) before the moment updates.
    """
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    moments.step += 1
    t = moments.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatchError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if name in decay_names and config.weight_decay:
            g = g + config.weight_decay * p
        m, v = moments.m[name], moments.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return params, moments


@dataclass
class TrainState:
    epoch: int
    step: int
    moments: AdamMoments
    history: list = field(default_factory=list)
    best_validation: tuple = None


def _write_config(run_dir, model, config, pre):
    payload = {"model": model.config.to_dict(), "train": config.to_dict(), "preprocess": asdict(pre)}
    (run_dir / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def _write_log(run_dir, history):
    with open(run_dir / "log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in history:
            w.writerow([_fmt(row[c]) for c in LOG_COLUMNS])


def save_train_state(run_dir, model, state):
    run_dir = Path(run_dir)
    save_checkpoint(model, run_dir / f"ckpt-{state.epoch}.hgp", extra={"epoch": state.epoch, "step": state.step})
    tensors = OrderedDict()
    for k, v in state.moments.m.items():
        tensors[f"m.{k}"] = v
    for k, v in state.moments.v.items():
        tensors[f"v.{k}"] = v
    write_tensors(run_dir / f"optim-{state.epoch}.hgp", model.config.to_dict(), tensors,
                  extra={"epoch": state.epoch, "step": state.moments.step, "history": state.history})


def load_train_state(run_dir, epoch, model):
    """Restore model and optimizer from ``ckpt-<epoch>``/``optim-<epoch>`` in ``run_dir``."""
    run_dir = Path(run_dir)
    _, store = read_tensors(run_dir / f"ckpt-{epoch}.hgp")
    model.load_state(store)
    header, tensors = read_tensors(run_dir / f"optim-{epoch}.hgp")
    params = model.parameter_store()
    moments = AdamMoments(
        m=OrderedDict((k, tensors[f"m.{k}"].astype(p.dtype)) for k, p in params.items()),
        v=OrderedDict((k, tensors[f"v.{k}"].astype(p.dtype)) for k, p in params.items()),
        step=int(header["extra"]["step"]),
    )
    extra = header["extra"]
    return TrainState(epoch=int(extra["epoch"]), step=int(extra["step"]), moments=moments,
                      history=list(extra.get("history", [])))


def train_epoch(model, records, stats, config, pre, epoch, state, lr, cache, decay_names):
    sums = np.zeros(3)
    count = 0
    params = model.parameter_store()
    for b, batch in enumerate(epoch_batches(records, config.batch_size, config.seed, epoch)):
        crop_rng = np.random.default_rng([config.seed, epoch, b, 0])
        drop_rng = np.random.default_rng([config.seed, epoch, b, 1])
        images, q, t = make_batch(batch, stats, pre, crop_rng, cache)
        pred = model.forward(images, "train", drop_rng)
        value, gq, gt = batch_loss_and_grad(pred.q_raw, pred.t, q, t, config.loss_beta)
        if not math.isfinite(value.total):
            raise NonFiniteLossError(f"loss became {value.total} at epoch {epoch}, step {state.step + 1}",
                                     epoch=epoch, step=state.step + 1)
        model.zero_grad()
        model.backward(gq, gt)
        adam_step(params, model.gradient_store(), state.moments, lr, config, decay_names)
        state.step += 1
        n = len(batch)
        sums += n * np.array([value.total, value.translation_term, value.orientation_term])
        count += n
    return sums / count


def fit(model, scene_split, stats, config, preprocess=None, run_dir=None, resume_epoch=None,
        cache_images=True, stop_after=None):
    """Train ``model`` in place on ``scene_split.train``.

    ``preprocess`` configures rescale/crop (training uses random crops).
    With ``run_dir`` set, writes config/log/checkpoints there; with
    ``resume_epoch`` also set, restarts from that checkpoint. ``stop_after``
    halts after the given number of completed epochs (for interruption
    tests). Returns the final :class:`TrainState`.
    """
    records = list(scene_split.train)
    if not records:
        raise ValueError("training split is empty")
    pre = (preprocess or PreprocessConfig()).with_mode("train_random_crop")
    run_dir = Path(run_dir) if run_dir is not None else None
    model.regressor.dropout.p = config.dropout_prob
    if resume_epoch is not None:
        if run_dir is None:
            raise ValueError("resuming needs run_dir")
        state = load_train_state(run_dir, resume_epoch, model)
    else:
        state = TrainState(epoch=0, step=0, moments=AdamMoments.zeros_like(model.parameter_store()))
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_config(run_dir, model, config, pre)
        _write_log(run_dir, state.history)
    cache = ImageCache(pre.rescale_short_side, max_items=None if cache_images else 0)
    decay_names = model.decayed_names()
    total = config.total_epochs
    while state.epoch < total:
        if stop_after is not None and state.epoch >= stop_after:
            break
        e = state.epoch
        lr = lr_at(config, e)
        mean = train_epoch(model, records, stats, config, pre, e, state, lr, cache, decay_names)
        state.epoch = e + 1
        row = dict(zip(LOG_COLUMNS, (state.epoch, state.step, lr, *map(float, mean))))
        state.history.append(row)
        log.info("epoch %d/%d lr %.1e loss %.5f (t %.5f, q %.5f)", state.epoch, total, lr, *mean)
        if run_dir is not None:
            _write_log(run_dir, state.history)
            if state.epoch % max(config.checkpoint_every, 1) == 0 or state.epoch == total:
                save_train_state(run_dir, model, state)
    return state


def select_beta(scores):
    """Pick the beta with the lowest score; ties go to the smaller beta.

    ``scores`` maps beta -> score.
    """
    best = None
    for beta in sorted(scores):
        if best is None or scores[beta] < scores[best]:
            best = beta
    return best


def holdout_split(records, fraction=0.1):
    """Split records (already in frame order) into a head and its last ``fraction`` tail."""
    records = list(records)
    n_hold = max(1, int(math.ceil(len(records) * fraction)))
    if n_hold >= len(records):
        raise ValueError("not enough training frames to carve out a validation tail")
    return records[:-n_hold], records[-n_hold:]


def beta_grid_search(model_config, scene_split, stats, candidate_betas, budget_epochs, config,
                     preprocess=None, holdout_fraction=0.1, init_seed=None, pretrained=None):
    """Train one model per candidate beta and score it on a held-out tail of the train split.

    Score = median translation error (m) + median orientation error (rad).
    Returns ``(best_beta, reports)`` where ``reports`` maps beta to a dict
    with the medians, the score and the trained model's final train loss.
    """
    from .evaluation import evaluate, median
    from .data import SceneSplit
    from .model import build_model

    betas = sorted(float(b) for b in candidate_betas)
    if not betas:
        raise ValueError("need at least one candidate beta")
    fit_part, held = holdout_split(scene_split.train, holdout_fraction)
    pre = preprocess or PreprocessConfig()
    reports = OrderedDict()
    for beta in betas:
        cfg = replace(config, loss_beta=beta, lr_stages=truncate_stages(config.lr_stages, budget_epochs))
        model = build_model(model_config, seed=config.seed if init_seed is None else init_seed, pretrained=pretrained)
        state = fit(model, SceneSplit(train=fit_part, test=[]), stats, cfg, pre)
        errs = evaluate(model, held, stats, pre)
        mt, mq = median(errs.translation_error_m), median(errs.orientation_error_deg)
        reports[beta] = {
            "beta": beta,
            "median_t_m": mt,
            "median_q_deg": mq,
            "score": mt + math.radians(mq),
            "final_train_loss": state.history[-1]["loss_total"] if state.history else float("nan"),
            "model": model,
        }
    best = select_beta({b: r["score"] for b, r in reports.items()})
    return best, reports
