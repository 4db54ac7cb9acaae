"""Numpy layer library used to build the hourglass network."""

from .layers import (
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

__all__ = [
    "BasicBlock",
    "BatchNorm",
    "Conv2d",
    "Dropout",
    "Flatten",
    "Linear",
    "MaxPool2d",
    "Module",
    "ReLU",
    "Sequential",
    "UpConv2d",
]
