"""Training on a synthetic scene
==============================

Renders a small scene with known camera poses, trains a narrow network
until it memorises the training frames, and then scores it. Takes under a
minute on one CPU core.
"""

import tempfile
from pathlib import Path

from hourglass_pose import (
    ModelConfig,
    PreprocessConfig,
    TrainConfig,
    build_model,
    compute_scene_stats,
    evaluate,
    fit,
    generate_fixture_scene,
    median,
    scan_scene,
)

root = Path(tempfile.mkdtemp())
generate_fixture_scene(root / "toy", n_sequences=2, frames_per_seq=16, image_hw=(64, 64), seed=0,
                       n_train_sequences=1)
split = scan_scene(root, "toy")
print(len(split.train), "training frames,", len(split.test), "test frames")

# per-channel statistics come from the training frames only
pre = PreprocessConfig(64, 64)
stats = compute_scene_stats(split.train, 64)
print(stats)

# no dropout, full batch, and a fast-then-slow schedule
config = TrainConfig(lr_stages=[(1e-2, 100), (1e-3, 60), (1e-4, 40)], batch_size=16, loss_beta=1.0,
                     dropout_prob=0.0, seed=0)
model = build_model(ModelConfig.tiny(input_hw=(64, 64)), seed=1)
state = fit(model, split, stats, config, pre, run_dir=root / "run")
for row in state.history[::40] + state.history[-1:]:
    print(f"epoch {row['epoch']:3d}  lr {row['lr']:.0e}  loss {row['loss_total']:.4f}")

###############################################################################
# Errors on seen and unseen frames
# --------------------------------
# The training frames should be near zero. The held-out sequence is a
# different camera path, so 16 frames are nowhere near enough to generalise.

for name, records in (("train", split.train), ("test", split.test)):
    errs = evaluate(model, records, stats, pre)
    print(name, f"median {median(errs.translation_error_m):.3f} m, {median(errs.orientation_error_deg):.2f} deg")

print("log and checkpoints in", root / "run")
