"""Test-set evaluation, per-scene median summaries and error histograms.

CSV files are UTF-8 with LF line endings and floats printed with six
significant digits:

- errors:    scene, sequence, frame_index, t_err_m, q_err_deg
- summary:   scene, n_frames, median_t_m, median_q_deg  (+ final AVERAGE row)
- histogram: edge, value
"""

from __future__ import annotations

import csv
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ImageCache, PreprocessConfig, make_batch
from .errors import EmptyInputError, UnsortedEdgesError
from .geometry import angular_error_deg, quat_normalize, translation_error_m

DEFAULT_T_EDGES = np.round(np.arange(0.0, 1.0 + 1e-9, 0.05), 10)
DEFAULT_Q_EDGES = np.arange(0.0, 40.0 + 1e-9, 2.0)
AVERAGE = "AVERAGE"


@dataclass
class FrameErrors:
    scene: str = ""
    sequence: list = field(default_factory=list)
    frame_index: list = field(default_factory=list)
    translation_error_m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    orientation_error_deg: np.ndarray = field(default_factory=lambda: np.zeros(0))
    q_pred: np.ndarray = None
    t_pred: np.ndarray = None

    def __len__(self):
        return len(self.translation_error_m)


@dataclass
class SceneSummary:
    n_frames: int
    median_t: float
    median_q: float


@dataclass
class EvalSummary:
    scenes: OrderedDict
    average_t: float
    average_q: float


@dataclass
class CumulativeHistogram:
    bin_edges: np.ndarray
    cdf: np.ndarray


def evaluate(model, records, stats, preprocess=None, batch_size=32, scene=None):
    """Per-frame translation (m) and orientation (deg) errors on ``records``.

    Frames are centre-cropped, run through the network in eval mode and the
    predicted quaternion is normalized before measuring.
    """
    records = list(records)
    if not records:
        raise EmptyInputError("no test frames to evaluate")
    pre = (preprocess or PreprocessConfig()).with_mode("test_center_crop")
    cache = ImageCache(pre.rescale_short_side, max_items=0)
    qs, ts = [], []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        images, _, _ = make_batch(chunk, stats, pre, None, cache)
        pred = model.forward(images, "eval")
        qs.append(np.asarray(pred.q_raw, dtype=np.float64))
        ts.append(np.asarray(pred.t, dtype=np.float64))
    q_raw, t_hat = np.concatenate(qs), np.concatenate(ts)
    q_gt = np.stack([r.pose.q for r in records])
    t_gt = np.stack([r.pose.t for r in records])
    q_err = np.empty(len(records))
    for i, r in enumerate(records):
        try:
            q_err[i] = angular_error_deg(quat_normalize(q_raw[i]), q_gt[i])
        except ValueError as exc:
            raise type(exc)(f"frame {r.sequence}/{r.frame_index}: {exc}") from exc
    return FrameErrors(
        scene=scene if scene is not None else records[0].scene,
        sequence=[r.sequence for r in records],
        frame_index=[r.frame_index for r in records],
        translation_error_m=np.asarray(translation_error_m(t_hat, t_gt), dtype=np.float64).reshape(-1),
        orientation_error_deg=q_err,
        q_pred=q_raw,
        t_pred=t_hat,
    )


def median(values):
    """Order-statistic median; even counts average the two middle values."""
    xs = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    n = xs.size
    if n == 0:
        raise EmptyInputError("median of an empty sequence")
    mid = n // 2
    if n % 2:
        return float(xs[mid])
    return float((xs[mid - 1] + xs[mid]) / 2.0)


def summarize(per_scene):
    """Per-scene medians and their unweighted mean across scenes.

    ``per_scene`` is an iterable of :class:`FrameErrors` (or a mapping
    scene -> FrameErrors).
    """
    if isinstance(per_scene, dict):
        per_scene = list(per_scene.values())
    per_scene = list(per_scene)
    if not per_scene:
        raise EmptyInputError("no scenes to summarize")
    scenes = OrderedDict()
    for fe in per_scene:
        scenes[fe.scene] = SceneSummary(len(fe), median(fe.translation_error_m), median(fe.orientation_error_deg))
    avg_t = float(np.mean([s.median_t for s in scenes.values()]))
    avg_q = float(np.mean([s.median_q for s in scenes.values()]))
    return EvalSummary(scenes=scenes, average_t=avg_t, average_q=avg_q)


def _check(errors, bin_edges):
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    edges = np.asarray(bin_edges, dtype=np.float64).reshape(-1)
    if errors.size == 0:
        raise EmptyInputError("no errors to histogram")
    if edges.size == 0 or np.any(np.diff(edges) <= 0):
        raise UnsortedEdgesError("bin edges must be strictly ascending")
    return errors, edges


def cumulative_histogram(errors, bin_edges):
    """``cdf[i]`` = fraction of errors <= ``bin_edges[i]``."""
    errors, edges = _check(errors, bin_edges)
    counts = np.searchsorted(np.sort(errors), edges, side="right")
    return CumulativeHistogram(bin_edges=edges, cdf=counts / errors.size)


def plain_histogram(errors, bin_edges):
    """Normalized counts for right-open bins plus an overflow bin.

    With edges ``e0 < ... < ek`` the bins are ``[e0, e1), ..., [e(k-1), ek)``
    and ``[ek, inf)``; values below ``e0`` are counted in the first bin.
    Returns an array of length ``len(bin_edges)`` that sums to one.
    """
    errors, edges = _check(errors, bin_edges)
    idx = np.searchsorted(edges[1:], errors, side="right")
    return np.bincount(idx, minlength=edges.size) / errors.size


# ----------------------------------------------------------------------------- CSV


def fmt(v):
    return f"{float(v):.6g}"


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_errors_csv(path, errors):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["scene", "sequence", "frame_index", "t_err_m", "q_err_deg"])
        for seq, idx, te, qe in zip(errors.sequence, errors.frame_index,
                                    errors.translation_error_m, errors.orientation_error_deg):
            w.writerow([errors.scene, seq, int(idx), fmt(te), fmt(qe)])


def read_errors_csv(path):
    """Parse one or more scenes from an errors CSV; returns an ordered scene -> FrameErrors map."""
    rows = OrderedDict()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["scene"], []).append(row)
    out = OrderedDict()
    for scene, rs in rows.items():
        out[scene] = FrameErrors(
            scene=scene,
            sequence=[r["sequence"] for r in rs],
            frame_index=[int(r["frame_index"]) for r in rs],
            translation_error_m=np.array([float(r["t_err_m"]) for r in rs]),
            orientation_error_deg=np.array([float(r["q_err_deg"]) for r in rs]),
        )
    return out


def write_summary_csv(path, summary):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["scene", "n_frames", "median_t_m", "median_q_deg"])
        total = 0
        for scene, s in summary.scenes.items():
            w.writerow([scene, s.n_frames, fmt(s.median_t), fmt(s.median_q)])
            total += s.n_frames
        w.writerow([AVERAGE, total, fmt(summary.average_t), fmt(summary.average_q)])


def read_summary_csv(path):
    scenes = OrderedDict()
    avg = None
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            entry = SceneSummary(int(row["n_frames"]), float(row["median_t_m"]), float(row["median_q_deg"]))
            if row["scene"] == AVERAGE:
                avg = entry
            else:
                scenes[row["scene"]] = entry
    if avg is None:
        raise EmptyInputError(f"{path}: no {AVERAGE} row")
    return EvalSummary(scenes=scenes, average_t=avg.median_t, average_q=avg.median_q)


def write_histogram_csv(path, edges, values):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["edge", "value"])
        for e, v in zip(edges, values):
            w.writerow([fmt(e), fmt(v)])


def write_report(out_dir, per_scene, t_edges=DEFAULT_T_EDGES, q_edges=DEFAULT_Q_EDGES):
    """Summary table plus cumulative and plain histograms over all frames of all scenes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(per_scene, dict):
        per_scene = list(per_scene.values())
    summary = summarize(per_scene)
    write_summary_csv(out / "summary.csv", summary)
    t_all = np.concatenate([fe.translation_error_m for fe in per_scene])
    q_all = np.concatenate([fe.orientation_error_deg for fe in per_scene])
    for tag, errs, edges in (("t", t_all, t_edges), ("q", q_all, q_edges)):
        cum = cumulative_histogram(errs, edges)
        write_histogram_csv(out / f"cumulative_{tag}.csv", cum.bin_edges, cum.cdf)
        write_histogram_csv(out / f"histogram_{tag}.csv", np.asarray(edges), plain_histogram(errs, edges))
    return summary
