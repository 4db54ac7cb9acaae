"""Hourglass pose network: residual encoder, up-convolution decoder, FC regressor.

Two variants differ only in how encoder stage outputs are merged into the
decoder: ``concat`` (Hourglass-Pose) stacks channels, ``sum``
(HourglassSum-Pose) adds feature maps element-wise.

Skip wiring: the stage-4 output feeds the decoder; stage-3, stage-2 and
stage-1 outputs are merged into the outputs of up-convolutions 1, 2 and 3
(14, 28 and 56 pixels for a 224 input); the final 3x3 convolution reads the
last merged map.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidConfigError, ShapeMismatchError, UninitializedModelError
from .nn import (
    BasicBlock,
    BatchNorm,
    Conv2d,
    Dropout,
    Flatten,
    Linear,
    MaxPool2d,
    Module,
    ReLU,
    Sequential,
    UpConv2d,
)

VARIANTS = ("concat", "sum")


@dataclass
class ModelConfig:
    """Network topology. Defaults reproduce the full-size network."""

    variant: str = "sum"
    input_hw: tuple = (224, 224)
    encoder_channels: list = field(default_factory=lambda: [64, 64, 128, 256, 512])
    encoder_block_counts: list = field(default_factory=lambda: [3, 4, 6, 3])
    decoder_channels: list = field(default_factory=lambda: [256, 128, 64])
    final_conv_channels: int = 32
    regressor_hidden: int = 2048
    dropout_prob: float = 0.5
    width_multiplier: float = 1.0

    def __post_init__(self):
        self.input_hw = tuple(int(v) for v in self.input_hw)
        self.encoder_channels = [int(c) for c in self.encoder_channels]
        self.encoder_block_counts = [int(c) for c in self.encoder_block_counts]
        self.decoder_channels = [int(c) for c in self.decoder_channels]

    def validate(self):
        if self.variant not in VARIANTS:
            raise InvalidConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if len(self.input_hw) != 2 or any(v <= 0 or v % 32 for v in self.input_hw):
            raise InvalidConfigError(f"input_hw {self.input_hw} must be two positive multiples of 32")
        if len(self.encoder_block_counts) != 4 or any(b < 1 for b in self.encoder_block_counts):
            raise InvalidConfigError("encoder_block_counts must hold four positive counts")
        if len(self.encoder_channels) != 5:
            raise InvalidConfigError("encoder_channels must be [stem, stage1, stage2, stage3, stage4]")
        if len(self.decoder_channels) != 3:
            raise InvalidConfigError("decoder_channels must list the three up-convolution widths")
        if not 0.0 < self.width_multiplier <= 1.0:
            raise InvalidConfigError(f"width_multiplier {self.width_multiplier} not in (0, 1]")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise InvalidConfigError(f"dropout_prob {self.dropout_prob} not in [0, 1)")
        if min(self.encoder_channels + self.decoder_channels) < 1 or self.final_conv_channels < 1:
            raise InvalidConfigError("channel counts must be positive")
        if self.regressor_hidden < 1:
            raise InvalidConfigError("regressor_hidden must be positive")
        if self.variant == "sum":
            enc = self.scaled(self.encoder_channels)[1:4][::-1]
            dec = self.scaled(self.decoder_channels)
            if enc != dec:
                raise InvalidConfigError(
                    f"sum variant needs decoder widths {dec} equal to encoder stages 3, 2, 1 {enc}"
                )
        return self

    def scaled(self, channels):
        m = self.width_multiplier
        if isinstance(channels, (int, np.integer)):
            return max(1, math.ceil(channels * m - 1e-9))
        return [max(1, math.ceil(c * m - 1e-9)) for c in channels]

    def to_dict(self):
        d = asdict(self)
        d["input_hw"] = list(self.input_hw)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    @classmethod
    def tiny(cls, variant="sum", input_hw=(32, 32), width_multiplier=0.125, **kw):
        """Desk-scale configuration used by tests, demos and the fixture recipe."""
        return cls(variant=variant, input_hw=input_hw, width_multiplier=width_multiplier, **kw)


@dataclass
class PosePrediction:
    """Raw network output. ``q_raw`` is deliberately left unnormalized."""

    q_raw: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.q_raw)


class Encoder(Module):
    """Residual encoder with the classifier head removed; exposes stage outputs."""

    def __init__(self, config, dtype=np.float32):
        super().__init__()
        stem_ch, *stage_ch = config.scaled(config.encoder_channels)
        self.stem = self.add("stem", Sequential(
            ("conv", Conv2d(3, stem_ch, 7, 2, 3, bias=False, dtype=dtype)),
            ("bn", BatchNorm(stem_ch, dtype=dtype)),
            ("relu", ReLU()),
        ))
        self.pool = self.add("pool", MaxPool2d(3, 2, 1))
        self.stages = []
        in_ch = stem_ch
        for i, (ch, count) in enumerate(zip(stage_ch, config.encoder_block_counts)):
            stride = 1 if i == 0 else 2
            blocks = [(str(b), BasicBlock(in_ch if b == 0 else ch, ch, stride if b == 0 else 1, dtype=dtype))
                      for b in range(count)]
            self.stages.append(self.add(f"resblock{i + 1}", Sequential(*blocks)))
            in_ch = ch
        self.out_channels = stage_ch

    def stage_shapes(self, shape):
        s = self.stem.output_shape(shape)
        out = OrderedDict(conv=s)
        s = self.pool.output_shape(s)
        out["pool"] = s
        for i, stage in enumerate(self.stages):
            s = stage.output_shape(s)
            out[f"resblock{i + 1}"] = s
        return out

    def forward(self, x, train=False, rng=None):
        """Return the list of the four stage outputs (stage 4 last)."""
        self.trace = OrderedDict()
        y = self.stem.forward(x, train)
        self.trace["conv"] = y.shape
        y = self.pool.forward(y)
        self.trace["pool"] = y.shape
        outs = []
        for i, stage in enumerate(self.stages):
            y = stage.forward(y, train)
            self.trace[f"resblock{i + 1}"] = y.shape
            outs.append(y)
        return outs

    def backward(self, douts):
        """``douts``: gradients for the four stage outputs (``None`` means zero)."""
        d = None
        for i in reversed(range(4)):
            g = douts[i]
            if g is not None:
                d = g if d is None else d + g
            d = self.stages[i].backward(d)
        d = self.pool.backward(d)
        return self.stem.backward(d)


def aggregate_skip(decoder_fm, encoder_fm, variant):
    """Merge an encoder feature map into a decoder feature map.

    ``sum`` adds element-wise; ``concat`` stacks channels with the decoder
    channels first.
    """
    if decoder_fm.ndim != 4 or encoder_fm.ndim != 4:
        raise ShapeMismatchError("skip aggregation expects 4-D feature maps")
    d, e = decoder_fm.shape, encoder_fm.shape
    if d[0] != e[0] or d[2:] != e[2:]:
        raise ShapeMismatchError(f"skip maps disagree in batch or resolution: {d} vs {e}")
    if variant == "sum":
        if d[1] != e[1]:
            raise ShapeMismatchError(f"sum aggregation needs equal channels: {d[1]} vs {e[1]}")
        return decoder_fm + encoder_fm
    if variant == "concat":
        return np.concatenate([decoder_fm, encoder_fm], axis=1)
    raise InvalidConfigError(f"unknown variant {variant!r}")


def _split_skip_grad(dout, dec_channels, variant):
    if variant == "sum":
        return dout, dout
    return dout[:, :dec_channels], dout[:, dec_channels:]


class Decoder(Module):
    """Three up-convolution blocks and a final 3x3 convolution.

    Each block is conv -> ReLU -> batch norm; a skip map is merged after
    every up-convolution block.
    """

    def __init__(self, config, dtype=np.float32):
        super().__init__()
        self.variant = config.variant
        enc_ch = config.scaled(config.encoder_channels)[1:]
        dec_ch = config.scaled(config.decoder_channels)
        skip_ch = [enc_ch[2], enc_ch[1], enc_ch[0]]
        in_ch = enc_ch[3]
        self.blocks = []
        self.block_out = []
        for i, (ch, sk) in enumerate(zip(dec_ch, skip_ch)):
            blk = self.add(f"upconv{i + 1}", Sequential(
                ("conv", UpConv2d(in_ch, ch, 4, dtype=dtype)),
                ("relu", ReLU()),
                ("bn", BatchNorm(ch, dtype=dtype)),
            ))
            self.blocks.append(blk)
            self.block_out.append(ch)
            in_ch = ch + sk if self.variant == "concat" else ch
        out_ch = config.scaled(config.final_conv_channels)
        self.final = self.add("final", Sequential(
            ("conv", Conv2d(in_ch, out_ch, 3, 1, 1, dtype=dtype)),
            ("relu", ReLU()),
            ("bn", BatchNorm(out_ch, dtype=dtype)),
        ))
        self.out_channels = out_ch

    def stage_shapes(self, shape, skip_shapes):
        out = OrderedDict()
        s = shape
        for i, blk in enumerate(self.blocks):
            s = blk.output_shape(s)
            out[f"upconv{i + 1}"] = s
            sk = skip_shapes[2 - i]
            if self.variant == "concat":
                s = (s[0], s[1] + sk[1]) + s[2:]
        out["final"] = self.final.output_shape(s)
        return out

    def forward(self, skips, train=False, rng=None):
        """``skips``: the encoder's four stage outputs (stage 1 first)."""
        self.trace = OrderedDict()
        y = skips[3]
        for i, blk in enumerate(self.blocks):
            y = blk.forward(y, train)
            self.trace[f"upconv{i + 1}"] = y.shape
            y = aggregate_skip(y, skips[2 - i], self.variant)
        y = self.final.forward(y, train)
        self.trace["final"] = y.shape
        return y

    def backward(self, dout):
        """Return gradients for the four encoder stage outputs."""
        dskips = [None] * 4
        d = self.final.backward(dout)
        for i in reversed(range(3)):
            d, dskips[2 - i] = _split_skip_grad(d, self.block_out[i], self.variant)
            d = self.blocks[i].backward(d)
        dskips[3] = d
        return dskips


class Regressor(Module):
    """Flatten -> localization FC -> batch norm -> dropout -> (FC_q, FC_t)."""

    def __init__(self, config, in_shape, dtype=np.float32):
        super().__init__()
        features = int(np.prod(in_shape))
        hidden = config.scaled(config.regressor_hidden)
        self.flatten = self.add("flatten", Flatten())
        self.fc = self.add("fc", Linear(features, hidden, dtype=dtype))
        self.bn = self.add("bn", BatchNorm(hidden, dtype=dtype))
        self.dropout = self.add("dropout", Dropout(config.dropout_prob))
        self.fc_q = self.add("fc_q", Linear(hidden, 4, dtype=dtype))
        self.fc_t = self.add("fc_t", Linear(hidden, 3, dtype=dtype))
        self.in_features = features

    def stage_shapes(self, shape):
        s = self.flatten.output_shape(shape)
        h = self.fc.output_shape(s)
        return OrderedDict(fc=h, fc_q=self.fc_q.output_shape(h), fc_t=self.fc_t.output_shape(h))

    def forward(self, x, train=False, rng=None):
        h = self.fc.forward(self.flatten.forward(x), train)
        h = self.dropout.forward(self.bn.forward(h, train), train, rng)
        return self.fc_q.forward(h), self.fc_t.forward(h)

    def backward(self, dq, dt):
        dh = self.fc_q.backward(dq) + self.fc_t.backward(dt)
        dh = self.bn.backward(self.dropout.backward(dh))
        return self.flatten.backward(self.fc.backward(dh))


def build_encoder(config, dtype=np.float32):
    return Encoder(config.validate(), dtype=dtype)


def build_decoder(config, dtype=np.float32):
    return Decoder(config.validate(), dtype=dtype)


def build_regressor(config, dtype=np.float32):
    config.validate()
    h, w = config.input_hw
    in_shape = (config.scaled(config.final_conv_channels), h // 4, w // 4)
    return Regressor(config, in_shape, dtype=dtype)


class HourglassPose(Module):
    """The full pose network.

    Parameters are allocated as zeros on construction; call
    :func:`init_parameters` or :meth:`load_state` before running it.
    """

    def __init__(self, config, dtype=np.float32):
        super().__init__()
        self.config = config.validate()
        self.dtype = np.dtype(dtype)
        self.encoder = self.add("encoder", build_encoder(config, dtype))
        self.decoder = self.add("decoder", build_decoder(config, dtype))
        self.regressor = self.add("regressor", build_regressor(config, dtype))
        self.initialized = False

    def stage_shapes(self, batch=1):
        """Output shape of every named stage, by shape propagation alone."""
        h, w = self.config.input_hw
        enc = self.encoder.stage_shapes((batch, 3, h, w))
        skips = [enc[f"resblock{i}"] for i in range(1, 5)]
        dec = self.decoder.stage_shapes(skips[3], skips)
        reg = self.regressor.stage_shapes(dec["final"])
        out = OrderedDict()
        for prefix, d in (("encoder", enc), ("decoder", dec), ("regressor", reg)):
            for k, v in d.items():
                out[f"{prefix}.{k}"] = tuple(v)
        return out

    def trace(self):
        """Shapes recorded by the most recent forward pass."""
        out = OrderedDict()
        for prefix, m in (("encoder", self.encoder), ("decoder", self.decoder)):
            for k, v in m.trace.items():
                out[f"{prefix}.{k}"] = tuple(v)
        for k in ("fc", "fc_q", "fc_t"):
            out[f"regressor.{k}"] = tuple(self._reg_shapes[k])
        return out

    def forward(self, images, mode="eval", rng=None):
        """Run the network on an ``(N, 3, H, W)`` batch; returns a :class:`PosePrediction`."""
        if not self.initialized:
            raise UninitializedModelError("parameters were never initialized or loaded")
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        images = np.asarray(images)
        h, w = self.config.input_hw
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (h, w):
            raise ShapeMismatchError(f"expected images of shape (N, 3, {h}, {w}), got {images.shape}")
        train = mode == "train"
        x = images.astype(self.dtype, copy=False)
        skips = self.encoder.forward(x, train)
        fm = self.decoder.forward(skips, train)
        q, t = self.regressor.forward(fm, train, rng)
        self._reg_shapes = {"fc": (q.shape[0], self.regressor.fc.out_features), "fc_q": q.shape, "fc_t": t.shape}
        return PosePrediction(q_raw=q, t=t)

    def backward(self, dq, dt):
        """Backpropagate output gradients; parameter gradients accumulate in place."""
        dfm = self.regressor.backward(dq.astype(self.dtype, copy=False), dt.astype(self.dtype, copy=False))
        dskips = self.decoder.backward(dfm)
        return self.encoder.backward(dskips)

    def state(self):
        """Ordered map of every parameter and buffer (live arrays, not copies)."""
        out = OrderedDict(self.named_parameters())
        out.update(self.named_buffers())
        return out

    def parameter_store(self):
        return OrderedDict(self.named_parameters())

    def gradient_store(self):
        return OrderedDict(self.named_grads())

    def load_state(self, store, strict=True):
        """Copy arrays from ``store`` into the model (names must match)."""
        own = self.state()
        if strict:
            missing = set(own) - set(store)
            extra = set(store) - set(own)
            if missing or extra:
                raise ShapeMismatchError(
                    f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}"
                )
        for name, value in store.items():
            if name not in own:
                continue
            value = np.asarray(value)
            if own[name].shape != value.shape:
                raise ShapeMismatchError(f"{name}: expected shape {own[name].shape}, got {value.shape}")
            own[name][...] = value
        self.initialized = True


def count_parameters(model):
    """Total number of trainable scalars (running statistics excluded)."""
    return int(sum(v.size for _, v in model.named_parameters()))


def _xavier_fill(arr, fan_in, fan_out, rng):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    # Chunked so the 100k x 2k localization layer never needs a float64 copy.
    flat = arr.reshape(-1)
    step = 1 << 22
    for start in range(0, flat.size, step):
        chunk = rng.random(min(step, flat.size - start), dtype=np.float64 if arr.dtype == np.float64 else np.float32)
        flat[start : start + chunk.size] = (chunk * 2.0 - 1.0) * bound


def init_parameters(model, pretrained=None, seed=0):
    """Initialize every parameter of ``model`` deterministically from ``seed``.

    Conv and FC weights are drawn uniformly from
    ``[-sqrt(6 / (fan_in + fan_out)), +sqrt(...)]``; biases are zero,
    batch-norm scales one and shifts zero, running statistics reset.
    When ``pretrained`` (a name -> array mapping) is given, every encoder
    entry is copied from it instead.
    """
    rng = np.random.default_rng(seed)
    for path, module in model.modules():
        if isinstance(module, (Conv2d, Linear)):
            _xavier_fill(module.params["weight"], module.fan_in, module.fan_out, rng)
            if "bias" in module.params:
                module.params["bias"][...] = 0
        elif isinstance(module, BatchNorm):
            module.params["weight"][...] = 1
            module.params["bias"][...] = 0
            module.buffers["running_mean"][...] = 0
            module.buffers["running_var"][...] = 1
    if pretrained is not None:
        own = OrderedDict((n, v) for n, v in model.state().items() if n.startswith("encoder."))
        missing = [n for n in own if n not in pretrained]
        if missing:
            raise ShapeMismatchError(f"pretrained store lacks {len(missing)} encoder entries, e.g. {missing[0]}")
        for name, target in own.items():
            src = np.asarray(pretrained[name])
            if src.shape != target.shape:
                raise ShapeMismatchError(f"{name}: pretrained shape {src.shape} != {target.shape}")
            target[...] = src
    model.zero_grad()
    model.initialized = True
    return model


def build_model(config, seed=0, pretrained=None, dtype=np.float32):
    model = HourglassPose(config, dtype=dtype)
    return init_parameters(model, pretrained=pretrained, seed=seed)
