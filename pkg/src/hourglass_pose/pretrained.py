"""Import of ImageNet-pretrained 34-layer residual network weights into the encoder.

Works on any name -> array mapping laid out like torchvision's ``resnet34``
state dict, so the package itself never imports torch. See
``tools/convert_resnet34.py`` for the download-and-convert step.
"""

from __future__ import annotations

import re
from collections import OrderedDict

import numpy as np

from .errors import ShapeMismatchError

_STEM = {"conv1.": "encoder.stem.conv.", "bn1.": "encoder.stem.bn."}
_LAYER = re.compile(r"^layer([1-4])\.(\d+)\.(.+)$")


def resnet_name_to_encoder(name):
    """Translate one torchvision parameter name; ``None`` for entries the encoder has no use for."""
    if name.startswith("fc.") or name.endswith("num_batches_tracked"):
        return None
    for src, dst in _STEM.items():
        if name.startswith(src):
            return dst + name[len(src):]
    m = _LAYER.match(name)
    if m:
        return f"encoder.resblock{m.group(1)}.{m.group(2)}.{m.group(3)}"
    raise KeyError(f"unrecognized residual-network entry {name!r}")


def encoder_store_from_resnet(state_dict, model=None):
    """Build the ``pretrained`` store expected by :func:`~hourglass_pose.model.init_parameters`.

    With ``model`` given, names and shapes are checked against its encoder.
    """
    out = OrderedDict()
    for name, value in state_dict.items():
        target = resnet_name_to_encoder(name)
        if target is not None:
            out[target] = np.asarray(value, dtype=np.float32)
    if model is not None:
        own = OrderedDict((k, v) for k, v in model.state().items() if k.startswith("encoder."))
        missing = sorted(set(own) - set(out))
        if missing:
            raise ShapeMismatchError(f"source lacks {len(missing)} encoder entries, e.g. {missing[0]}")
        for k, v in own.items():
            if out[k].shape != v.shape:
                raise ShapeMismatchError(f"{k}: source shape {out[k].shape} != encoder shape {v.shape}")
    return out
