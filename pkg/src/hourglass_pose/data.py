"""7-Scenes directory ingestion, per-scene statistics, preprocessing and batching.

Layout of one scene::

    <root>/<scene>/TrainSplit.txt        sequence names, one per line
    <root>/<scene>/TestSplit.txt
    <root>/<scene>/seq-01/frame-000000.color.png
    <root>/<scene>/seq-01/frame-000000.pose.txt   4x4 camera-to-world matrix

Split files may spell sequences ``sequence1`` or ``seq-01``. Poses are
ingested as stored (camera-to-world), quaternions canonicalized to
``w >= 0``.
"""

from __future__ import annotations

import json
import math
import re
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    EmptySetError,
    LayoutError,
    MalformedMatrixError,
    PoseParseError,
    TooSmallError,
    ZeroVarianceError,
)
from .geometry import Pose, homogeneous_to_pose, pose_to_homogeneous, quat_normalize

TRAIN_SPLIT = "TrainSplit.txt"
TEST_SPLIT = "TestSplit.txt"
_FRAME_RE = re.compile(r"^frame-(\d+)\.color\.png$")


@dataclass(frozen=True)
class FrameRecord:
    image_path: Path
    pose: Pose
    scene: str
    sequence: str
    frame_index: int

    @property
    def key(self):
        return (self.sequence, self.frame_index)


@dataclass
class SceneSplit:
    train: list
    test: list


@dataclass(frozen=True)
class SceneStats:
    """Per-channel mean and population std of intensities in [0, 1]."""

    mean: tuple
    std: tuple

    def save(self, path, scene=""):
        Path(path).write_text(json.dumps({"scene": scene, "mean": list(self.mean), "std": list(self.std)}, indent=2) + "\n")

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text())
        return cls(mean=tuple(float(v) for v in d["mean"]), std=tuple(float(v) for v in d["std"]))


def stats_path(scene_dir):
    """Cache location of a scene's statistics: ``<scene_dir>.stats.json`` beside the scene."""
    scene_dir = Path(scene_dir)
    return scene_dir.parent / f"{scene_dir.name}.stats.json"


@dataclass(frozen=True)
class PreprocessConfig:
    rescale_short_side: int = 256
    crop: int = 224
    mode: str = "test_center_crop"

    def __post_init__(self):
        if self.crop > self.rescale_short_side:
            raise ValueError(f"crop {self.crop} exceeds rescale_short_side {self.rescale_short_side}")
        if self.mode not in ("train_random_crop", "test_center_crop"):
            raise ValueError(f"unknown preprocessing mode {self.mode!r}")

    def with_mode(self, mode):
        return PreprocessConfig(self.rescale_short_side, self.crop, mode)


# --------------------------------------------------------------------------- files


def parse_pose_file(path):
    """Read a 4x4 whitespace-separated matrix and convert it to a :class:`Pose`."""
    try:
        M = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise PoseParseError(f"{path}: {exc}") from exc
    if M.shape != (4, 4):
        raise PoseParseError(f"{path}: expected 4x4 matrix, got shape {M.shape}")
    try:
        return homogeneous_to_pose(M)
    except MalformedMatrixError as exc:
        raise PoseParseError(f"{path}: {exc}") from exc


def write_pose_file(path, pose):
    M = pose_to_homogeneous(pose)
    lines = ["\t".join(f"{v:.9e}" for v in row) for row in M]
    Path(path).write_text("\n".join(lines) + "\n")


def _sequence_dirname(token):
    m = re.search(r"(\d+)", token)
    if not m:
        raise LayoutError(f"cannot read a sequence number from {token!r}")
    return f"seq-{int(m.group(1)):02d}"


def read_split_file(path):
    path = Path(path)
    if not path.is_file():
        raise LayoutError(f"missing split file {path}")
    return [_sequence_dirname(line.strip()) for line in path.read_text().splitlines() if line.strip()]


def load_image(path):
    """8-bit RGB image as float32 H x W x 3 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / np.float32(255.0)


def scan_scene(root_dir, scene_name):
    """Collect train/test :class:`FrameRecord` lists of one scene, ordered by (sequence, frame)."""
    scene_dir = Path(root_dir) / scene_name
    if not scene_dir.is_dir():
        raise LayoutError(f"scene directory {scene_dir} does not exist")
    splits = {}
    for attr, fname in (("train", TRAIN_SPLIT), ("test", TEST_SPLIT)):
        splits[attr] = read_split_file(scene_dir / fname)
    overlap = set(splits["train"]) & set(splits["test"])
    if overlap:
        raise LayoutError(f"{scene_dir}: sequences {sorted(overlap)} appear in both splits")
    out = {}
    for attr, seqs in splits.items():
        records = []
        for seq in sorted(seqs):
            seq_dir = scene_dir / seq
            if not seq_dir.is_dir():
                raise LayoutError(f"split lists {seq} but {seq_dir} is missing")
            for img in sorted(seq_dir.iterdir()):
                m = _FRAME_RE.match(img.name)
                if not m:
                    continue
                pose_file = seq_dir / f"frame-{m.group(1)}.pose.txt"
                if not pose_file.is_file():
                    raise LayoutError(f"{img} has no pose file")
                records.append(FrameRecord(img, parse_pose_file(pose_file), scene_name, seq, int(m.group(1))))
        records.sort(key=lambda r: r.key)
        out[attr] = records
    return SceneSplit(train=out["train"], test=out["test"])


# ------------------------------------------------------------------ preprocessing


def rescaled_size(h, w, short_side):
    """``(H, W)`` after scaling the shorter side to ``short_side``; long side rounded half-up."""
    if h <= w:
        return short_side, int(math.floor(w * short_side / h + 0.5))
    return int(math.floor(h * short_side / w + 0.5)), short_side


def _linear_axis(n_in, n_out):
    # half-pixel centres, edge-clamped
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, (src - i0)


def rescale_image(image, short_side):
    """Bilinear resize so that ``min(H, W) == short_side`` (aspect ratio kept)."""
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[:2]
    if min(h, w) < 1:
        raise TooSmallError(f"image of size {h}x{w} is empty")
    oh, ow = rescaled_size(h, w, short_side)
    if (oh, ow) == (h, w):
        return image.copy()
    r0, r1, rw = _linear_axis(h, oh)
    c0, c1, cw = _linear_axis(w, ow)
    rw = rw.astype(np.float32)[:, None, None]
    cw = cw.astype(np.float32)[None, :, None]
    rows = image[r0] * (1 - rw) + image[r1] * rw
    return rows[:, c0] * (1 - cw) + rows[:, c1] * cw


def crop_offsets(h, w, crop, mode, rng=None):
    if h < crop or w < crop:
        raise TooSmallError(f"rescaled image {h}x{w} is smaller than the {crop}px crop")
    if mode == "test_center_crop":
        return (h - crop) // 2, (w - crop) // 2
    return int(rng.integers(0, h - crop + 1)), int(rng.integers(0, w - crop + 1))


def normalize_and_crop(rescaled, stats, cfg, rng=None):
    """Steps 2-3 of :func:`preprocess` on an already rescaled image."""
    h, w = rescaled.shape[:2]
    r, c = crop_offsets(h, w, cfg.crop, cfg.mode, rng)
    patch = rescaled[r : r + cfg.crop, c : c + cfg.crop]
    mean = np.asarray(stats.mean, dtype=np.float32)
    std = np.asarray(stats.std, dtype=np.float32)
    out = (patch - mean) / std
    return np.ascontiguousarray(out.transpose(2, 0, 1))[None]


def preprocess(image, stats, cfg, rng=None):
    """Rescale, normalize per channel and crop one H x W x 3 image to ``[1, 3, crop, crop]``.

    Training mode draws crop offsets uniformly from ``rng``; test mode takes
    the centred crop and consumes no randomness.
    """
    return normalize_and_crop(rescale_image(image, cfg.rescale_short_side), stats, cfg, rng)


def compute_scene_stats(train_records, short_side=256, loader=None):
    """Per-channel mean and population std over all pixels of the rescaled training images."""
    if not train_records:
        raise EmptySetError("no training images to compute statistics from")
    loader = loader or load_image
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    for rec in train_records:
        img = rescale_image(loader(rec.image_path), short_side).astype(np.float64).reshape(-1, 3)
        total += img.sum(axis=0)
        total_sq += np.square(img).sum(axis=0)
        count += img.shape[0]
    mean = total / count
    var = np.maximum(total_sq / count - mean**2, 0.0)
    std = np.sqrt(var)
    if np.any(std <= 1e-12):
        raise ZeroVarianceError(f"channel standard deviation is zero (mean {mean.tolist()})")
    return SceneStats(mean=tuple(float(v) for v in mean), std=tuple(float(v) for v in std))


class ImageCache:
    """Keeps rescaled images in memory, up to ``max_items`` (``None`` = unbounded)."""

    def __init__(self, short_side, max_items=None, loader=None):
        self.short_side = short_side
        self.max_items = max_items
        self.loader = loader or load_image
        self._store = OrderedDict()

    def get(self, path):
        hit = self._store.get(path)
        if hit is not None:
            self._store.move_to_end(path)
            return hit
        img = rescale_image(self.loader(path), self.short_side)
        if self.max_items is None or self.max_items > 0:
            self._store[path] = img
            if self.max_items is not None and len(self._store) > self.max_items:
                self._store.popitem(last=False)
        return img


def make_batch(records, stats, cfg, rng=None, cache=None):
    """Stack preprocessed images and targets: ``(images, q, t)``."""
    cache = cache or ImageCache(cfg.rescale_short_side, max_items=0)
    images = np.concatenate([normalize_and_crop(cache.get(r.image_path), stats, cfg, rng) for r in records])
    q = np.stack([r.pose.q for r in records])
    t = np.stack([r.pose.t for r in records])
    return images, q, t


def epoch_batches(records, batch_size, seed, epoch_index):
    """Shuffle ``records`` with a permutation fixed by ``(seed, epoch_index)`` and chunk it."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    records = list(records)
    perm = np.random.default_rng([seed, epoch_index]).permutation(len(records))
    ordered = [records[i] for i in perm]
    return [ordered[i : i + batch_size] for i in range(0, len(ordered), batch_size)]


# ------------------------------------------------------------------------ fixture

_PLANE_Z = 2.0


def _random_rotation(rng, max_angle_deg):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(max_angle_deg) * rng.uniform(0.0, 1.0)
    return quat_normalize(np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * axis]))


def render_fixture_view(pose, image_hw):
    """Render a textured plane ``z = 2`` seen from a camera-to-world ``pose``.

    The plane carries a smooth colour gradient and a checkered quad, so the
    image is a deterministic, pose-dependent function.
    """
    h, w = image_hw
    f = 0.9 * w
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    rays = np.stack([(u + 0.5 - w / 2) / f, (v + 0.5 - h / 2) / f, np.ones_like(u)], axis=-1)
    R = pose_to_homogeneous(pose)[:3, :3]
    d = rays @ R.T
    s = (_PLANE_Z - pose.t[2]) / d[..., 2]
    px = pose.t[0] + s * d[..., 0]
    py = pose.t[1] + s * d[..., 1]
    img = np.stack([
        0.5 + 0.35 * np.sin(1.3 * px + 0.4),
        0.5 + 0.35 * np.cos(1.1 * py - 0.2),
        0.5 + 0.25 * np.sin(0.9 * (px - py)),
    ], axis=-1)
    inside = (np.abs(px - 0.2) < 0.9) & (np.abs(py + 0.1) < 0.7)
    checker = (np.floor(px / 0.3) + np.floor(py / 0.3)) % 2 == 0
    img[inside & checker] *= 0.35
    img[inside & ~checker] = 0.65 + 0.35 * img[inside & ~checker]
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def generate_fixture_scene(out_dir, n_sequences=2, frames_per_seq=3, image_hw=(60, 80), seed=0,
                           max_angle_deg=20.0, translation_extent=0.5, n_train_sequences=None):
    """Write a synthetic scene in 7-Scenes layout to ``out_dir``.

    The first ``n_train_sequences`` sequences (default: half, rounded up)
    form the training split. Output is byte-identical for equal arguments.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_train = (n_sequences + 1) // 2 if n_train_sequences is None else n_train_sequences
    names = [f"sequence{i + 1}" for i in range(n_sequences)]
    (out / TRAIN_SPLIT).write_text("".join(n + "\n" for n in names[:n_train]))
    (out / TEST_SPLIT).write_text("".join(n + "\n" for n in names[n_train:]))
    for s in range(n_sequences):
        seq_dir = out / f"seq-{s + 1:02d}"
        seq_dir.mkdir(exist_ok=True)
        for k in range(frames_per_seq):
            q = _random_rotation(rng, max_angle_deg) if max_angle_deg > 0 else np.array([1.0, 0, 0, 0])
            t = rng.uniform(-translation_extent, translation_extent, size=3)
            pose = Pose(q=q, t=t)
            Image.fromarray(render_fixture_view(pose, image_hw)).save(
                seq_dir / f"frame-{k:06d}.color.png", format="PNG", compress_level=6
            )
            write_pose_file(seq_dir / f"frame-{k:06d}.pose.txt", pose)
    return out
