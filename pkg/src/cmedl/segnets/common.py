"""Shared pieces for the segmentation networks.

All three architectures expose *hint taps*: designated feature maps used for
feature distillation between a teacher and a student network. The tap set is
selectable: ``high`` (default) is the last two decoder feature maps, ``mid``
is the bottleneck, ``low`` is the first two convolution outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from ..errors import ConfigurationError

HINT_LAYER_SETS = ("high", "mid", "low")
ARCHS = ("unet", "densefcn", "mrrn")

# base_width values at which the published tap shapes / parameter counts hold
PAPER_WIDTH = {"unet": 64, "densefcn": 48, "mrrn": 64}


@dataclass
class SegNetConfig:
    arch: str = "unet"
    in_channels: int = 1
    n_classes: int = 2
    base_width: int = 8
    hint_layer_set: str = "high"

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigurationError(f"unknown arch {self.arch!r}, expected one of {ARCHS}")
        if self.base_width < 4:
            raise ConfigurationError("base_width must be >= 4")
        if self.hint_layer_set not in HINT_LAYER_SETS:
            raise ConfigurationError(
                f"unknown hint_layer_set {self.hint_layer_set!r}, expected one of {HINT_LAYER_SETS}")

    @classmethod
    def paper(cls, arch: str, **kwargs) -> "SegNetConfig":
        return cls(arch=arch, base_width=PAPER_WIDTH[arch], **kwargs)


@dataclass
class SegOutput:
    logits: torch.Tensor          # (B, n_classes, H, W)
    probabilities: torch.Tensor   # softmax over the class axis
    hints: list = field(default_factory=list)


class ConvBNRelu(nn.Module):
    def __init__(self, c_in, c_out, kernel=3):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, kernel, padding=kernel // 2)
        self.bn = nn.BatchNorm2d(c_out)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))


class DoubleConv(nn.Module):
    """Two 3x3 conv + BN + ReLU stages; exposes the intermediate activation."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.block1 = ConvBNRelu(c_in, c_out)
        self.block2 = ConvBNRelu(c_out, c_out)

    def forward(self, x):
        mid = self.block1(x)
        return self.block2(mid)

    def forward_with_intermediate(self, x):
        mid = self.block1(x)
        return mid, self.block2(mid)


def check_divisible(x: torch.Tensor, divisor: int, arch: str) -> None:
    h, w = x.shape[-2], x.shape[-1]
    if h % divisor or w % divisor:
        raise ValueError(
            f"{arch} requires spatial dims divisible by {divisor}, got {h}x{w}")


def finalize(head_logits: torch.Tensor, hints: list) -> SegOutput:
    return SegOutput(logits=head_logits,
                     probabilities=torch.softmax(head_logits, dim=1),
                     hints=list(hints))


def build_segnet(config: SegNetConfig) -> nn.Module:
    from .unet import Unet
    from .densefcn import DenseFCN
    from .mrrn import MRRN

    cls = {"unet": Unet, "densefcn": DenseFCN, "mrrn": MRRN}[config.arch]
    return cls(config)


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters() if p.requires_grad)
