"""Residual translation generators and 70x70 patch discriminators.

Generator: 7x7 stem, two stride-2 downsampling convs, 9 residual blocks,
two fractionally-strided upsampling stages, 7x7 head with tanh. Instance
normalization throughout. Discriminator: stacked 4x4 stride-2 convs ending
in a 1-channel logit map, one logit per (nominally) 70x70 receptive field.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ..errors import ConfigurationError

DIRECTIONS = ("student_to_teacher", "teacher_to_student")


def init_gan_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    def __init__(self, in_channels=1, out_channels=1, width=8, n_residual_blocks=9):
        super().__init__()
        w = width
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(in_channels, w, 7),
            nn.InstanceNorm2d(w),
            nn.ReLU(inplace=True),
        ]
        for _ in range(2):  # two stride-2 downsampling convs
            layers += [
                nn.Conv2d(w, 2 * w, 3, stride=2, padding=1),
                nn.InstanceNorm2d(2 * w),
                nn.ReLU(inplace=True),
            ]
            w *= 2
        layers += [ResidualBlock(w) for _ in range(n_residual_blocks)]
        for _ in range(2):  # fractionally-strided upsampling
            layers += [
                nn.ConvTranspose2d(w, w // 2, 3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(w // 2),
                nn.ReLU(inplace=True),
            ]
            w //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(w, out_channels, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)
        init_gan_weights(self)

    def forward(self, x):
        return self.model(x)


class PatchDiscriminator(nn.Module):
    """Returns a logit map; patch_map_size() documents the receptive-field
    arithmetic (4x4 convs, strides 2,2,2,1,1 -> 70x70 receptive field)."""

    STRIDES = (2, 2, 2, 1, 1)
    KERNEL = 4

    def __init__(self, in_channels=1, width=8):
        super().__init__()
        w = width
        layers = [nn.Conv2d(in_channels, w, 4, stride=2, padding=1),
                  nn.LeakyReLU(0.2, inplace=True)]
        for stride in (2, 2, 1):
            layers += [nn.Conv2d(w, 2 * w, 4, stride=stride, padding=1),
                       nn.InstanceNorm2d(2 * w),
                       nn.LeakyReLU(0.2, inplace=True)]
            w *= 2
        layers += [nn.Conv2d(w, 1, 4, stride=1, padding=1)]
        self.model = nn.Sequential(*layers)
        init_gan_weights(self)

    @classmethod
    def patch_map_size(cls, h: int, w: int) -> tuple[int, int]:
        """Spatial size of the logit map, a pure function of the input size."""
        def out(n):
            for s in cls.STRIDES:
                n = (n + 2 * 1 - cls.KERNEL) // s + 1
            return n
        return out(h), out(w)

    def forward(self, x):
        return self.model(x)


@dataclass
class CycleGanNets:
    gen_s2t: ResnetGenerator    # student modality -> teacher modality
    gen_t2s: ResnetGenerator
    disc_student: PatchDiscriminator
    disc_teacher: PatchDiscriminator

    @classmethod
    def build(cls, in_channels=1, gen_width=8, disc_width=8, n_residual_blocks=9):
        return cls(
            gen_s2t=ResnetGenerator(in_channels, in_channels, gen_width, n_residual_blocks),
            gen_t2s=ResnetGenerator(in_channels, in_channels, gen_width, n_residual_blocks),
            disc_student=PatchDiscriminator(in_channels, disc_width),
            disc_teacher=PatchDiscriminator(in_channels, disc_width),
        )

    def modules(self) -> dict[str, nn.Module]:
        return {"gen_s2t": self.gen_s2t, "gen_t2s": self.gen_t2s,
                "disc_student": self.disc_student, "disc_teacher": self.disc_teacher}


def translate(nets: CycleGanNets, image: torch.Tensor, direction: str) -> torch.Tensor:
    if direction == "student_to_teacher":
        return nets.gen_s2t(image)
    if direction == "teacher_to_student":
        return nets.gen_t2s(image)
    raise ConfigurationError(f"unknown direction {direction!r}, expected one of {DIRECTIONS}")
