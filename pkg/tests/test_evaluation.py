import numpy as np
import pytest

from hourglass_pose.data import PreprocessConfig, compute_scene_stats, make_batch
from hourglass_pose.errors import EmptyInputError, UnsortedEdgesError
from hourglass_pose.evaluation import (
    DEFAULT_Q_EDGES,
    DEFAULT_T_EDGES,
    FrameErrors,
    cumulative_histogram,
    evaluate,
    median,
    plain_histogram,
    read_errors_csv,
    read_summary_csv,
    summarize,
    write_errors_csv,
    write_report,
)
from hourglass_pose.model import ModelConfig, build_model

PRE = PreprocessConfig(32, 32)


def _fe(scene, t, q):
    n = len(t)
    return FrameErrors(scene, ["seq-01"] * n, list(range(n)), np.asarray(t, float), np.asarray(q, float))


def test_median_examples(rng):
    assert median([1, 2, 3]) == 2
    assert median([1, 2, 3, 4]) == 2.5
    xs = rng.normal(size=1001)
    assert median(xs) == sorted(xs)[500]
    assert median(rng.permutation(xs)) == median(xs)
    with pytest.raises(EmptyInputError):
        median([])


def test_summarize_is_unweighted_over_scenes():
    one = summarize([_fe("a", [0.1, 0.2, 0.3], [1, 2, 3])])
    assert (one.average_t, one.average_q) == (0.2, 2.0)
    two = summarize([_fe("a", [0.2], [1]), _fe("b", [0.4, 0.4, 0.4, 0.4], [3, 3, 3, 3])])
    assert two.average_t == pytest.approx(0.3, abs=1e-15)
    assert two.scenes["b"].n_frames == 4


def test_cumulative_histogram_examples(rng):
    assert np.array_equal(cumulative_histogram([0.1, 0.2], [1, 2, 3]).cdf, [1, 1, 1])
    assert np.allclose(cumulative_histogram([1, 2, 3], [1.5, 3.5]).cdf, [1 / 3, 1])
    x = rng.exponential(size=500)
    edges = np.linspace(0, 4, 41)
    cdf = cumulative_histogram(x, edges).cdf
    assert np.array_equal(cdf, [sum(v <= e for v in x) / 500 for e in edges])
    with pytest.raises(UnsortedEdgesError):
        cumulative_histogram(x, [1, 0.5])
    with pytest.raises(EmptyInputError):
        cumulative_histogram([], [1])


def test_plain_histogram(rng):
    u = rng.random(100_000)
    h = plain_histogram(u, [0, 0.5, 1])
    assert h[2] == 0 and np.allclose(h[:2], 0.5, atol=0.01)
    assert np.array_equal(plain_histogram([0.7], [0, 0.5, 1]), [0, 1, 0])
    x = rng.exponential(size=777)
    for edges in (DEFAULT_T_EDGES, DEFAULT_Q_EDGES / 40):
        h = plain_histogram(x, edges)
        assert len(h) == len(edges) and h.sum() == pytest.approx(1, abs=1e-12)
        counts = [sum(edges[i] <= v < edges[i + 1] for v in x) for i in range(len(edges) - 1)]
        counts[0] += sum(v < edges[0] for v in x)
        assert np.array_equal(h[:-1] * 777, counts)
        assert h[-1] * 777 == sum(v >= edges[-1] for v in x)


def test_evaluate_matches_decomposed_pipeline(small_scene):
    from scipy.spatial.transform import Rotation

    _, _, split = small_scene
    stats = compute_scene_stats(split.train, 32)
    model = build_model(ModelConfig.tiny(), seed=21)
    errs = evaluate(model, split.test, stats, PRE)
    images, q, t = make_batch(split.test, stats, PRE)
    raw = model.forward(images, "eval")
    for i in range(len(split.test)):
        qp = raw.q_raw[i].astype(float)
        r_pred = Rotation.from_quat(np.r_[qp[1:], qp[0]])
        r_gt = Rotation.from_quat(np.r_[q[i, 1:], q[i, 0]])
        ang = np.degrees((r_pred.inv() * r_gt).magnitude())
        assert errs.orientation_error_deg[i] == pytest.approx(ang, abs=1e-6)
        assert errs.translation_error_m[i] == pytest.approx(np.linalg.norm(raw.t[i] - t[i]), abs=1e-6)
    again = evaluate(model, split.test, stats, PRE)
    assert np.array_equal(again.orientation_error_deg, errs.orientation_error_deg)
    assert np.array_equal(again.translation_error_m, errs.translation_error_m)


def test_rigged_heads_give_zero_error(small_scene):
    """Heads solved by least squares to reproduce every test pose from its hidden features."""
    _, _, split = small_scene
    stats = compute_scene_stats(split.train, 32)
    model = build_model(ModelConfig.tiny(), seed=5, dtype=np.float64)
    images, q, t = make_batch(split.test, stats, PRE)
    reg = model.regressor
    model.forward(images, "eval")
    hidden = reg.bn.forward(reg.fc._cache @ reg.fc.params["weight"].T + reg.fc.params["bias"])
    for head, target in ((reg.fc_q, q), (reg.fc_t, t)):
        head.params["weight"][...] = np.linalg.lstsq(hidden, target, rcond=None)[0].T
        head.params["bias"][...] = 0
    errs = evaluate(model, split.test, stats, PRE)
    assert np.abs(errs.translation_error_m).max() < 1e-6
    assert np.abs(errs.orientation_error_deg).max() < 1e-4


def test_csv_round_trip_and_report(tmp_path, rng):
    scenes = [_fe(f"s{i}", rng.exponential(0.3, 9 + i), rng.exponential(8, 9 + i)) for i in range(3)]
    for fe in scenes:
        write_errors_csv(tmp_path / f"{fe.scene}.csv", fe)
        back = read_errors_csv(tmp_path / f"{fe.scene}.csv")[fe.scene]
        assert np.allclose(back.translation_error_m, fe.translation_error_m, rtol=1e-5)
    summary = write_report(tmp_path / "rep", scenes)
    raw = (tmp_path / "rep" / "summary.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    lines = raw.decode().splitlines()
    assert lines[0] == "scene,n_frames,median_t_m,median_q_deg"
    assert lines[-1].startswith(f"AVERAGE,{sum(len(f) for f in scenes)},")
    parsed = read_summary_csv(tmp_path / "rep" / "summary.csv")
    assert parsed.average_t == pytest.approx(summary.average_t, rel=1e-5)
    recomputed = np.mean([s.median_t for s in summary.scenes.values()])
    assert abs(recomputed - summary.average_t) <= 1e-9
    for name in ("cumulative_t", "cumulative_q", "histogram_t", "histogram_q"):
        assert (tmp_path / "rep" / f"{name}.csv").read_text().startswith("edge,value\n")
