"""Minimal layer library with explicit forward/backward passes.

Every layer caches what its backward pass needs during ``forward``;
``backward`` takes the upstream gradient, accumulates parameter gradients
into ``self.grads`` and returns the gradient with respect to the input.
Arrays are NCHW for feature maps and NC for vectors.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatchError


class Module:
    """Base layer: trainable ``params``, non-trainable ``buffers`` and children."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self.decay = set()
        self._children = []
        self._cache = None

    def add(self, name, module):
        self._children.append((name, module))
        setattr(self, name.replace(".", "_"), module)
        return module

    def children(self):
        return list(self._children)

    def _walk(self, attr, prefix=""):
        for k, v in getattr(self, attr).items():
            yield prefix + k, v, self, k
        for name, child in self._children:
            yield from child._walk(attr, prefix + name + ".")

    def named_parameters(self, prefix=""):
        for name, value, _, _ in self._walk("params", prefix):
            yield name, value

    def named_grads(self, prefix=""):
        for name, _, owner, key in self._walk("params", prefix):
            yield name, owner.grads[key]

    def named_buffers(self, prefix=""):
        for name, value, _, _ in self._walk("buffers", prefix):
            yield name, value

    def decayed_names(self, prefix=""):
        out = set()
        for name, _, owner, key in self._walk("params", prefix):
            if key in owner.decay:
                out.add(name)
        return out

    def modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for name, child in self._children:
            yield from child.modules(prefix + name + ".")

    def zero_grad(self):
        for _, _, owner, key in self._walk("params"):
            owner.grads[key] = np.zeros_like(owner.params[key])

    def set_array(self, name, value):
        """Copy ``value`` into the parameter or buffer called ``name`` (relative path)."""
        head, _, tail = name.partition(".")
        if tail and any(head == n for n, _ in self._children):
            dict(self._children)[head].set_array(tail, value)
            return
        if name in self.params:
            target = self.params[name]
        elif name in self.buffers:
            target = self.buffers[name]
        else:
            raise KeyError(name)
        if target.shape != value.shape:
            raise ShapeMismatchError(f"{name}: expected shape {target.shape}, got {value.shape}")
        target[...] = value

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def output_shape(self, shape):
        """Shape propagation without computing anything."""
        raise NotImplementedError


class Sequential(Module):
    def __init__(self, *named):
        super().__init__()
        for name, module in named:
            self.add(name, module)

    def forward(self, x, train=False, rng=None):
        for _, m in self._children:
            x = m.forward(x, train, rng)
        return x

    def backward(self, dout):
        for _, m in reversed(self._children):
            dout = m.backward(dout)
        return dout

    def output_shape(self, shape):
        for _, m in self._children:
            shape = m.output_shape(shape)
        return shape


def _conv_out(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


class Conv2d(Module):
    """2-D cross-correlation via im2col; weight shape ``(out, in, k, k)``."""

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, bias=True, dtype=np.float32):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.params["weight"] = np.zeros((out_ch, in_ch, kernel, kernel), dtype=dtype)
        if bias:
            self.params["bias"] = np.zeros(out_ch, dtype=dtype)
        self.decay.add("weight")
        self.zero_grad()

    @property
    def fan_in(self):
        return self.in_ch * self.kernel * self.kernel

    @property
    def fan_out(self):
        return self.out_ch * self.kernel * self.kernel

    def output_shape(self, shape):
        n, c, h, w = shape
        if c != self.in_ch:
            raise ShapeMismatchError(f"conv expects {self.in_ch} channels, got {c}")
        k, s, p = self.kernel, self.stride, self.padding
        return (n, self.out_ch, _conv_out(h, k, s, p), _conv_out(w, k, s, p))

    def forward(self, x, train=False, rng=None):
        n, _, h, w = x.shape
        _, _, ho, wo = self.output_shape(x.shape)
        k, s, p = self.kernel, self.stride, self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, : s * (ho - 1) + 1 : s, : s * (wo - 1) + 1 : s]
        # (n, ho, wo, c, k, k) -> rows of im2col
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
        wmat = self.params["weight"].reshape(self.out_ch, -1)
        out = cols @ wmat.T
        if "bias" in self.params:
            out += self.params["bias"]
        self._cache = (cols, xp.shape, (n, ho, wo))
        return np.ascontiguousarray(out.reshape(n, ho, wo, self.out_ch).transpose(0, 3, 1, 2))

    def backward(self, dout):
        cols, xp_shape, (n, ho, wo) = self._cache
        k, s, p = self.kernel, self.stride, self.padding
        d2 = dout.transpose(0, 2, 3, 1).reshape(n * ho * wo, self.out_ch)
        wmat = self.params["weight"].reshape(self.out_ch, -1)
        self.grads["weight"] += (d2.T @ cols).reshape(self.params["weight"].shape)
        if "bias" in self.params:
            self.grads["bias"] += d2.sum(axis=0)
        dcols = (d2 @ wmat).reshape(n, ho, wo, self.in_ch, k, k)
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return dxp


class UpConv2d(Module):
    """Zero-insertion upsampling by 2 followed by an ordinary ``k x k`` convolution.

    Zeros are inserted between neighbouring pixels (``2n - 1`` samples per
    axis); padding ``k // 2`` then makes the output exactly ``2n`` wide for
    ``k = 4``.
    """

    def __init__(self, in_ch, out_ch, kernel=4, bias=True, dtype=np.float32):
        super().__init__()
        self.conv = self.add("conv", Conv2d(in_ch, out_ch, kernel, 1, kernel // 2, bias=bias, dtype=dtype))

    def output_shape(self, shape):
        n, c, h, w = shape
        return self.conv.output_shape((n, c, 2 * h - 1, 2 * w - 1))

    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        up = np.zeros((n, c, 2 * h - 1, 2 * w - 1), dtype=x.dtype)
        up[:, :, ::2, ::2] = x
        return self.conv.forward(up, train, rng)

    def backward(self, dout):
        return self.conv.backward(dout)[:, :, ::2, ::2]


class BatchNorm(Module):
    """Batch normalization over every axis except the channel axis (axis 1).

    Training mode normalizes with the biased batch variance and updates
    running statistics with the unbiased one; evaluation mode reads the
    running statistics and mutates nothing.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["weight"] = np.ones(channels, dtype=dtype)
        self.params["bias"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.zero_grad()

    def output_shape(self, shape):
        if shape[1] != self.channels:
            raise ShapeMismatchError(f"batch norm expects {self.channels} channels, got {shape[1]}")
        return shape

    def _bshape(self, x):
        return (1, -1) + (1,) * (x.ndim - 2)

    def forward(self, x, train=False, rng=None):
        self.output_shape(x.shape)
        axes = (0,) + tuple(range(2, x.ndim))
        bs = self._bshape(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // self.channels
            mom = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= 1 - mom
            rm += mom * mean
            rv *= 1 - mom
            rv += mom * var * (m / max(m - 1, 1))
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bs)) * inv.reshape(bs)
        self._cache = (xhat, inv, axes, bs, train)
        return xhat * self.params["weight"].reshape(bs) + self.params["bias"].reshape(bs)

    def backward(self, dout):
        xhat, inv, axes, bs, train = self._cache
        gamma = self.params["weight"]
        self.grads["weight"] += (dout * xhat).sum(axis=axes)
        self.grads["bias"] += dout.sum(axis=axes)
        dxhat = dout * gamma.reshape(bs)
        if not train:
            return dxhat * inv.reshape(bs)
        mean_d = dxhat.mean(axis=axes).reshape(bs)
        mean_dx = (dxhat * xhat).mean(axis=axes).reshape(bs)
        return (dxhat - mean_d - xhat * mean_dx) * inv.reshape(bs)


class ReLU(Module):
    def output_shape(self, shape):
        return shape

    def forward(self, x, train=False, rng=None):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._cache


class MaxPool2d(Module):
    def __init__(self, kernel=3, stride=2, padding=1):
        super().__init__()
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def output_shape(self, shape):
        n, c, h, w = shape
        k, s, p = self.kernel, self.stride, self.padding
        return (n, c, _conv_out(h, k, s, p), _conv_out(w, k, s, p))

    def forward(self, x, train=False, rng=None):
        k, s, p = self.kernel, self.stride, self.padding
        _, _, ho, wo = self.output_shape(x.shape)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, : s * (ho - 1) + 1 : s, : s * (wo - 1) + 1 : s]
        win = win.reshape(win.shape[:4] + (k * k,))
        arg = win.argmax(axis=-1)
        self._cache = (arg, xp.shape, ho, wo)
        return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        arg, xp_shape, ho, wo = self._cache
        k, s, p = self.kernel, self.stride, self.padding
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for idx in range(k * k):
            i, j = divmod(idx, k)
            dxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += dout * (arg == idx)
        return dxp[:, :, p:-p, p:-p] if p else dxp


class Linear(Module):
    """Fully connected layer; weight shape ``(out, in)``."""

    def __init__(self, in_features, out_features, bias=True, dtype=np.float32):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = np.zeros((out_features, in_features), dtype=dtype)
        if bias:
            self.params["bias"] = np.zeros(out_features, dtype=dtype)
        self.decay.add("weight")
        self.zero_grad()

    fan_in = property(lambda self: self.in_features)
    fan_out = property(lambda self: self.out_features)

    def output_shape(self, shape):
        if shape[-1] != self.in_features:
            raise ShapeMismatchError(f"linear layer expects {self.in_features} features, got {shape[-1]}")
        return shape[:-1] + (self.out_features,)

    def forward(self, x, train=False, rng=None):
        self.output_shape(x.shape)
        self._cache = x
        out = x @ self.params["weight"].T
        if "bias" in self.params:
            out += self.params["bias"]
        return out

    def backward(self, dout):
        x = self._cache
        self.grads["weight"] += dout.T @ x
        if "bias" in self.params:
            self.grads["bias"] += dout.sum(axis=0)
        return dout @ self.params["weight"]


class Dropout(Module):
    """Inverted dropout; active only in training mode, draws its mask from ``rng``."""

    def __init__(self, p=0.5):
        super().__init__()
        self.p = p

    def output_shape(self, shape):
        return shape

    def forward(self, x, train=False, rng=None):
        if not train or self.p == 0.0:
            self._cache = None
            return x
        if rng is None:
            rng = np.random.default_rng()
        keep = (rng.random(x.shape) >= self.p).astype(x.dtype) / x.dtype.type(1.0 - self.p)
        self._cache = keep
        return x * keep

    def backward(self, dout):
        return dout if self._cache is None else dout * self._cache


class Flatten(Module):
    def output_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))

    def forward(self, x, train=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._cache)


class BasicBlock(Module):
    """Two 3x3 conv/batch-norm pairs with an identity or projected shortcut."""

    def __init__(self, in_ch, out_ch, stride=1, dtype=np.float32):
        super().__init__()
        self.conv1 = self.add("conv1", Conv2d(in_ch, out_ch, 3, stride, 1, bias=False, dtype=dtype))
        self.bn1 = self.add("bn1", BatchNorm(out_ch, dtype=dtype))
        self.relu1 = self.add("relu1", ReLU())
        self.conv2 = self.add("conv2", Conv2d(out_ch, out_ch, 3, 1, 1, bias=False, dtype=dtype))
        self.bn2 = self.add("bn2", BatchNorm(out_ch, dtype=dtype))
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = self.add("downsample", Sequential(
                ("0", Conv2d(in_ch, out_ch, 1, stride, 0, bias=False, dtype=dtype)),
                ("1", BatchNorm(out_ch, dtype=dtype)),
            ))
        self.relu_out = self.add("relu_out", ReLU())

    def output_shape(self, shape):
        main = self.conv2.output_shape(self.conv1.output_shape(shape))
        return main

    def forward(self, x, train=False, rng=None):
        y = self.relu1.forward(self.bn1.forward(self.conv1.forward(x, train), train))
        y = self.bn2.forward(self.conv2.forward(y, train), train)
        short = x if self.downsample is None else self.downsample.forward(x, train)
        return self.relu_out.forward(y + short)

    def backward(self, dout):
        d = self.relu_out.backward(dout)
        dy = self.conv1.backward(self.bn1.backward(self.relu1.backward(self.conv2.backward(self.bn2.backward(d)))))
        dshort = d if self.downsample is None else self.downsample.backward(d)
        return dy + dshort
