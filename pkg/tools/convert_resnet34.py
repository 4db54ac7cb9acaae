"""Convert torchvision's ImageNet resnet34 weights into an encoder checkpoint.

    python3 tools/convert_resnet34.py resnet34_encoder.hgp

Needs torch + torchvision and network access the first time (weights are
cached by torchvision). The output is a checkpoint-format file holding only
``encoder.*`` tensors; pass it to ``hgpose train --pretrained``.
"""

import argparse

from hourglass_pose.checkpoint import write_tensors
from hourglass_pose.model import HourglassPose, ModelConfig
from hourglass_pose.pretrained import encoder_store_from_resnet


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--random", action="store_true", help="skip the download; convert an untrained network")
    args = ap.parse_args()

    import torchvision

    weights = None if args.random else torchvision.models.ResNet34_Weights.IMAGENET1K_V1
    net = torchvision.models.resnet34(weights=weights)
    state = {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    cfg = ModelConfig()
    store = encoder_store_from_resnet(state, HourglassPose(cfg))
    write_tensors(args.out, cfg.to_dict(), store, extra={"source": "torchvision resnet34",
                                                         "weights": str(weights)})
    print(f"wrote {len(store)} encoder tensors to {args.out}")


if __name__ == "__main__":
    main()
