"""Every layer's forward and backward checked against torch (float64)."""

import numpy as np
import pytest

from hourglass_pose.nn import BasicBlock, BatchNorm, Conv2d, Dropout, Flatten, Linear, MaxPool2d, ReLU, UpConv2d

torch = pytest.importorskip("torch")
F = torch.nn.functional


def _fill(layer, rng):
    for k, v in layer.named_parameters():
        v[...] = rng.normal(size=v.shape)
    for k, v in layer.named_buffers():
        v[...] = rng.uniform(0.5, 2.0, size=v.shape) if k.endswith("var") else rng.normal(size=v.shape)


def _compare(layer, torch_fn, x, rng, train=False, atol=1e-10):
    """Run numpy and torch side by side; compare output, input grad and parameter grads."""
    out = layer.forward(x, train)
    dout = rng.normal(size=out.shape)
    layer.zero_grad()
    dx = layer.backward(dout)
    tx = torch.tensor(x, requires_grad=True)
    tp = {k: torch.tensor(v.copy(), requires_grad=True) for k, v in layer.named_parameters()}
    tout = torch_fn(tx, tp)
    tout.backward(torch.tensor(dout))
    assert np.allclose(out, tout.detach().numpy(), atol=atol)
    assert np.allclose(dx, tx.grad.numpy(), atol=atol)
    for k, g in layer.named_grads():
        assert np.allclose(g, tp[k].grad.numpy(), atol=atol), k


@pytest.mark.parametrize("k,s,p,bias", [(3, 1, 1, True), (7, 2, 3, False), (1, 2, 0, False), (3, 2, 1, True)])
def test_conv2d(rng, k, s, p, bias):
    layer = Conv2d(3, 5, k, s, p, bias=bias, dtype=np.float64)
    _fill(layer, rng)
    x = rng.normal(size=(2, 3, 11, 9))
    _compare(layer, lambda tx, tp: F.conv2d(tx, tp["weight"], tp.get("bias"), stride=s, padding=p), x, rng)


def test_upconv_equals_transposed_convolution(rng):
    # zero insertion + pad 2 + 4x4 conv == transposed conv (stride 2, pad 1) with the flipped kernel
    layer = UpConv2d(4, 3, 4, dtype=np.float64)
    _fill(layer, rng)
    x = rng.normal(size=(2, 4, 5, 6))
    assert layer.output_shape(x.shape) == (2, 3, 10, 12)

    def ref(tx, tp):
        w = tp["conv.weight"].flip(2, 3).transpose(0, 1)
        return F.conv_transpose2d(tx, w, tp["conv.bias"], stride=2, padding=1)

    _compare(layer, ref, x, rng)


@pytest.mark.parametrize("train", [True, False])
@pytest.mark.parametrize("shape", [(4, 3, 5, 5), (6, 7)])
def test_batchnorm(rng, train, shape):
    layer = BatchNorm(shape[1], dtype=np.float64)
    _fill(layer, rng)
    rm0, rv0 = layer.buffers["running_mean"].copy(), layer.buffers["running_var"].copy()
    x = rng.normal(size=shape) * 2 + 1
    trm, trv = torch.tensor(rm0), torch.tensor(rv0)
    ref = lambda tx, tp: F.batch_norm(tx, trm, trv, tp["weight"], tp["bias"], training=train, momentum=0.1, eps=1e-5)
    _compare(layer, ref, x, rng, train=train)
    assert np.allclose(layer.buffers["running_mean"], trm.numpy(), atol=1e-12)
    assert np.allclose(layer.buffers["running_var"], trv.numpy(), atol=1e-12)
    if not train:
        assert np.array_equal(layer.buffers["running_mean"], rm0)


def test_maxpool(rng):
    layer = MaxPool2d(3, 2, 1)
    x = rng.normal(size=(2, 3, 9, 10))
    _compare(layer, lambda tx, tp: F.max_pool2d(tx, 3, 2, 1), x, rng)


def test_linear_relu_flatten(rng):
    layer = Linear(12, 5, dtype=np.float64)
    _fill(layer, rng)
    x = rng.normal(size=(3, 12))
    _compare(layer, lambda tx, tp: F.linear(tx, tp["weight"], tp["bias"]), x, rng)
    _compare(ReLU(), lambda tx, tp: F.relu(tx), rng.normal(size=(3, 4, 2)), rng)
    _compare(Flatten(), lambda tx, tp: tx.reshape(tx.shape[0], -1), rng.normal(size=(2, 3, 4, 5)), rng)


@pytest.mark.parametrize("cin,cout,stride", [(4, 4, 1), (4, 8, 2)])
@pytest.mark.parametrize("train", [True, False])
def test_basic_block(rng, cin, cout, stride, train):
    layer = BasicBlock(cin, cout, stride, dtype=np.float64)
    _fill(layer, rng)
    bufs = {k: torch.tensor(v.copy()) for k, v in layer.named_buffers()}

    def bn(x, tp, name):
        return F.batch_norm(x, bufs[f"{name}.running_mean"], bufs[f"{name}.running_var"],
                            tp[f"{name}.weight"], tp[f"{name}.bias"], training=train)

    def ref(tx, tp):
        y = F.relu(bn(F.conv2d(tx, tp["conv1.weight"], stride=stride, padding=1), tp, "bn1"))
        y = bn(F.conv2d(y, tp["conv2.weight"], padding=1), tp, "bn2")
        short = tx
        if "downsample.0.weight" in tp:
            short = bn(F.conv2d(tx, tp["downsample.0.weight"], stride=stride), tp, "downsample.1")
        return F.relu(y + short)

    _compare(layer, ref, rng.normal(size=(3, cin, 8, 8)), rng, train=train)


def test_dropout_inverted_scaling_and_eval_identity(rng):
    layer = Dropout(0.5)
    x = np.ones((200, 100))
    assert layer.forward(x, train=False) is x
    y = layer.forward(x, train=True, rng=np.random.default_rng(0))
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.02
    d = layer.backward(np.ones_like(x))
    assert np.array_equal(d, y)
    again = layer.forward(x, train=True, rng=np.random.default_rng(0))
    assert np.array_equal(again, y)
