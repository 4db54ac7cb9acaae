"""Network shapes, parameter counts and a gradient check
======================================================

Builds both skip-connection variants, prints the feature map sizes through
the hourglass and checks backprop against central differences on a tiny
float64 copy.
"""

import numpy as np

from hourglass_pose import ModelConfig, build_model, count_parameters
from hourglass_pose.gradcheck import check_model_gradients

# full-size models at 224x224; summed skips vs concatenated skips
for variant in ("sum", "concat"):
    model = build_model(ModelConfig(variant=variant), seed=0)
    print(variant, f"{count_parameters(model):,}", "parameters")

# a narrow model is quicker to poke at
model = build_model(ModelConfig.tiny("concat", input_hw=(64, 64)), seed=0)
x = np.random.default_rng(0).normal(size=(2, 3, 64, 64)).astype(np.float32)
skips = model.encoder.forward(x, "eval")
for i, fm in enumerate(skips, 1):
    print("encoder stage", i, fm.shape)
print("decoder out", model.decoder.forward(skips, "eval").shape)

pred = model.forward(x, "eval")
print("q_raw", pred.q_raw.shape, "t", pred.t.shape)

###############################################################################
# Gradient check
# --------------
# Eval mode freezes batch norm to its running statistics, which keeps the
# loss smooth enough for central differences with a step of 1e-3.

model = build_model(ModelConfig.tiny("sum", input_hw=(32, 32), dropout_prob=0.0), seed=0, dtype=np.float64)
rng = np.random.default_rng(1)
images = rng.normal(size=(2, 3, 32, 32))
q = rng.normal(size=(2, 4))
q /= np.linalg.norm(q, axis=1, keepdims=True)
t = rng.normal(size=(2, 3))
report = check_model_gradients(model, images, q, t, beta=3.0, mode="eval", n_per_type=20)
for kind, worst in report.worst.items():
    print(f"{kind:10s} checked {report.checked[kind]:3d}  worst rel. error {worst:.1e}")
print("ok:", report.ok)
