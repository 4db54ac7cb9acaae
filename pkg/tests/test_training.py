import math
from collections import OrderedDict

import numpy as np
import pytest

from hourglass_pose.data import PreprocessConfig, compute_scene_stats, generate_fixture_scene, scan_scene
from hourglass_pose.errors import NonFiniteLossError, OutOfRangeError
from hourglass_pose.evaluation import evaluate, median
from hourglass_pose.model import ModelConfig, build_model
from hourglass_pose.training import (
    AdamMoments,
    TrainConfig,
    adam_step,
    beta_grid_search,
    fit,
    load_train_state,
    lr_at,
    select_beta,
    truncate_stages,
)

PRE = PreprocessConfig(32, 32)


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    generate_fixture_scene(root / "s", n_sequences=2, frames_per_seq=12, image_hw=(36, 36), seed=2)
    split = scan_scene(root, "s")
    return split, compute_scene_stats(split.train, 32)


def _cfg(**kw):
    base = dict(lr_stages=[(1e-3, 2), (1e-4, 2)], batch_size=4, loss_beta=2.0, dropout_prob=0.5, seed=7,
                checkpoint_every=2)
    base.update(kw)
    return TrainConfig(**base)


def _params(model):
    return OrderedDict((k, v.copy()) for k, v in model.state().items())


# ----------------------------------------------------------------------------- schedule


def test_lr_schedule_boundaries():
    cfg = TrainConfig()
    assert lr_at(cfg, 0) == 1e-3
    assert lr_at(cfg, 49) == 1e-3
    assert lr_at(cfg, 50) == 1e-4 and lr_at(cfg, 89) == 1e-4
    assert lr_at(cfg, 90) == 1e-5 and lr_at(cfg, 119) == 1e-5
    assert cfg.total_epochs == 120
    for bad in (120, -1):
        with pytest.raises(OutOfRangeError):
            lr_at(cfg, bad)


def test_truncate_stages():
    assert truncate_stages([(1e-3, 50), (1e-4, 40)], 60) == [(1e-3, 50), (1e-4, 10)]
    assert truncate_stages([(1e-3, 5)], 8) == [(1e-3, 5), (1e-3, 3)]


# ----------------------------------------------------------------------------- Adam


def test_adam_zero_gradient_is_noop():
    p = OrderedDict(w=np.arange(5.0))
    adam_step(p, {"w": np.zeros(5)}, AdamMoments.zeros_like(p), 1e-2, TrainConfig(weight_decay=0.0))
    assert np.array_equal(p["w"], np.arange(5.0))


def test_adam_first_step_closed_form():
    cfg = TrainConfig()
    p = OrderedDict(w=np.array([0.0]))
    adam_step(p, {"w": np.array([1.0])}, AdamMoments.zeros_like(p), 1e-3, cfg)
    assert p["w"][0] == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-15)


def test_adam_matches_scalar_transcription(rng):
    cfg = TrainConfig(weight_decay=1e-2)
    p = OrderedDict(w=rng.normal(size=10), b=rng.normal(size=3))
    ref = {k: [float(x) for x in v] for k, v in p.items()}
    m = {k: [0.0] * len(v) for k, v in ref.items()}
    v2 = {k: [0.0] * len(v) for k, v in ref.items()}
    moments = AdamMoments.zeros_like(p)
    lr = 3e-3
    for step in range(1, 6):
        grads = {k: rng.normal(size=len(v)) for k, v in ref.items()}
        adam_step(p, grads, moments, lr, cfg, decay_names={"w"})
        for k in ref:
            for i in range(len(ref[k])):
                g = float(grads[k][i]) + (cfg.weight_decay * ref[k][i] if k == "w" else 0.0)
                m[k][i] = 0.9 * m[k][i] + 0.1 * g
                v2[k][i] = 0.99 * v2[k][i] + 0.01 * g * g
                mh = m[k][i] / (1 - 0.9**step)
                vh = v2[k][i] / (1 - 0.99**step)
                ref[k][i] -= lr * mh / (math.sqrt(vh) + 1e-8)
    for k in ref:
        assert np.abs(p[k] - np.array(ref[k])).max() <= 1e-12


def test_weight_decay_targets_only_weights():
    model = build_model(ModelConfig.tiny(), seed=0)
    for _, v in model.named_parameters():
        v[...] += 0.25
    before = _params(model)
    params = model.parameter_store()
    model.zero_grad()
    adam_step(params, model.gradient_store(), AdamMoments.zeros_like(params), 1e-2, TrainConfig(weight_decay=1e-1),
              model.decayed_names())
    changed = {k for k in params if not np.array_equal(params[k], before[k])}
    assert changed == set(model.decayed_names())
    assert all(k.endswith("weight") and params[k].ndim >= 2 for k in changed)
    assert not any(".bn" in k or k.endswith("bias") for k in changed)


# ----------------------------------------------------------------------------- fit


def test_zero_learning_rate_leaves_parameters(scene):
    split, stats = scene
    model = build_model(ModelConfig.tiny(), seed=1)
    before = _params(model)
    fit(model, split, stats, _cfg(lr_stages=[(0.0, 2)], weight_decay=1e-5), PRE)
    for k, v in model.parameter_store().items():
        assert np.array_equal(v, before[k]), k


def test_executed_epochs_equal_schedule_and_loss_drops(scene, tmp_path):
    split, stats = scene
    model = build_model(ModelConfig.tiny(), seed=1)
    state = fit(model, split, stats, _cfg(lr_stages=[(1e-3, 3), (1e-4, 2)]), PRE, run_dir=tmp_path)
    assert state.epoch == 5 and len(state.history) == 5
    assert state.step == 5 * math.ceil(len(split.train) / 4)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,step,lr,loss_total,loss_t,loss_q" and len(lines) == 6
    assert sorted(p.name for p in tmp_path.glob("ckpt-*.hgp")) == ["ckpt-2.hgp", "ckpt-4.hgp", "ckpt-5.hgp"]


def test_identical_seeds_give_identical_checkpoints(scene, tmp_path):
    split, stats = scene
    for run in ("a", "b"):
        fit(build_model(ModelConfig.tiny("concat"), seed=3), split, stats, _cfg(), PRE, run_dir=tmp_path / run)
    for name in ("ckpt-4.hgp", "optim-4.hgp", "log.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_resume_reproduces_uninterrupted_run(scene, tmp_path):
    split, stats = scene
    cfg = _cfg()
    full = build_model(ModelConfig.tiny(), seed=3)
    fit(full, split, stats, cfg, PRE, run_dir=tmp_path / "full")

    part = build_model(ModelConfig.tiny(), seed=3)
    fit(part, split, stats, cfg, PRE, run_dir=tmp_path / "part", stop_after=2)
    resumed = build_model(ModelConfig.tiny(), seed=123)
    state = fit(resumed, split, stats, cfg, PRE, run_dir=tmp_path / "part", resume_epoch=2)
    assert state.epoch == 4
    for k, v in full.state().items():
        assert np.array_equal(resumed.state()[k], v), k
    assert (tmp_path / "full" / "ckpt-4.hgp").read_bytes() == (tmp_path / "part" / "ckpt-4.hgp").read_bytes()
    reloaded = build_model(ModelConfig.tiny(), seed=0)
    assert load_train_state(tmp_path / "part", 4, reloaded).moments.step == state.moments.step


def test_non_finite_loss_aborts(scene):
    split, stats = scene
    model = build_model(ModelConfig.tiny(), seed=0)
    model.regressor.fc_t.params["bias"][0] = np.nan
    with pytest.raises(NonFiniteLossError) as info:
        fit(model, split, stats, _cfg(), PRE)
    assert info.value.epoch == 0 and info.value.step == 1


# ----------------------------------------------------------------------------- beta search


def test_select_beta_ties_go_to_smaller():
    assert select_beta({10.0: 0.5, 1.0: 0.5, 5.0: 0.7}) == 1.0
    assert select_beta({3.0: 0.2}) == 3.0
    assert select_beta({1.0: 0.3, 10.0: 0.1}) == 10.0


def test_beta_search_single_candidate(scene):
    split, stats = scene
    best, reports = beta_grid_search(ModelConfig.tiny(), split, stats, [4.0], 1, _cfg(), PRE)
    assert best == 4.0 and list(reports) == [4.0]


def test_beta_search_winner_survives_rescoring(scene):
    split, stats = scene
    best, reports = beta_grid_search(ModelConfig.tiny(), split, stats, [1, 5, 10], 2, _cfg(), PRE)
    held = split.train[-2:]
    rescored = {}
    for beta, rep in reports.items():
        errs = evaluate(rep["model"], held, stats, PRE)
        mt, mq = median(errs.translation_error_m), median(errs.orientation_error_deg)
        assert mt == rep["median_t_m"] and mq == rep["median_q_deg"]
        rescored[beta] = mt + math.radians(mq)
    assert best == min(sorted(rescored), key=lambda b: rescored[b])
