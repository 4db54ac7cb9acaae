import numpy as np
import pytest

from hourglass_pose.errors import ShapeMismatchError
from hourglass_pose.model import HourglassPose, ModelConfig, build_model
from hourglass_pose.pretrained import encoder_store_from_resnet, resnet_name_to_encoder


def test_name_mapping():
    assert resnet_name_to_encoder("conv1.weight") == "encoder.stem.conv.weight"
    assert resnet_name_to_encoder("bn1.running_var") == "encoder.stem.bn.running_var"
    assert resnet_name_to_encoder("layer3.5.bn2.bias") == "encoder.resblock3.5.bn2.bias"
    assert resnet_name_to_encoder("layer2.0.downsample.1.weight") == "encoder.resblock2.0.downsample.1.weight"
    assert resnet_name_to_encoder("fc.weight") is None
    assert resnet_name_to_encoder("layer1.0.bn1.num_batches_tracked") is None


def test_imported_encoder_reproduces_torchvision_features():
    torch = pytest.importorskip("torch")
    tv = pytest.importorskip("torchvision")
    torch.manual_seed(0)
    net = tv.models.resnet34(weights=None).eval()
    for m in net.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            m.running_mean.uniform_(-0.2, 0.2)
            m.running_var.uniform_(0.5, 1.5)
    state = {k: v.numpy() for k, v in net.state_dict().items()}
    cfg = ModelConfig(input_hw=(64, 64))
    store = encoder_store_from_resnet(state, HourglassPose(cfg))
    model = build_model(cfg, seed=0, pretrained=store)
    x = np.random.default_rng(0).normal(size=(2, 3, 64, 64)).astype(np.float32)
    ours = model.encoder.forward(x)
    with torch.no_grad():
        y = net.maxpool(net.relu(net.bn1(net.conv1(torch.tensor(x)))))
        for i, layer in enumerate((net.layer1, net.layer2, net.layer3, net.layer4)):
            y = layer(y)
            ref = y.numpy()
            assert np.abs(ours[i] - ref).max() <= 1e-5 * np.abs(ref).max()


def test_shape_mismatch_is_reported():
    model = HourglassPose(ModelConfig(width_multiplier=0.5))
    state = {"conv1.weight": np.zeros((64, 3, 7, 7))}
    with pytest.raises(ShapeMismatchError):
        encoder_store_from_resnet(state, model)
