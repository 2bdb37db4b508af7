"""Encoder-decoder with skip concatenations, 4 pooling stages.

Channel plan (width w, published shapes at w = 64): encoder w, 2w, 4w, 8w,
bottleneck 8w, decoder 4w, 2w, w, w. The decoder therefore ends with two
w-channel stages at half and full resolution; those are the high-level hint
taps (64 @ 128x128 and 64 @ 256x256 for 256x256 inputs at w = 64).
"""

from __future__ import annotations

import torch
from torch import nn

from .common import SegNetConfig, SegOutput, DoubleConv, check_divisible, finalize


class Unet(nn.Module):
    DIVISOR = 16

    def __init__(self, config: SegNetConfig):
        super().__init__()
        self.config = config
        w = config.base_width
        enc_ch = [w, 2 * w, 4 * w, 8 * w]
        dec_ch = [4 * w, 2 * w, w, w]

        self.enc = nn.ModuleList()
        c_prev = config.in_channels
        for c in enc_ch:
            self.enc.append(DoubleConv(c_prev, c))
            c_prev = c
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = DoubleConv(enc_ch[-1], enc_ch[-1])

        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        c_prev = enc_ch[-1]
        for c, skip in zip(dec_ch, reversed(enc_ch)):
            self.up.append(nn.ConvTranspose2d(c_prev, c, kernel_size=2, stride=2))
            self.dec.append(DoubleConv(c + skip, c))
            c_prev = c
        self.head = nn.Conv2d(dec_ch[-1], config.n_classes, kernel_size=1)

    def forward(self, x: torch.Tensor) -> SegOutput:
        check_divisible(x, self.DIVISOR, "unet")
        low_taps = []
        skips = []
        for i, block in enumerate(self.enc):
            if i == 0:
                mid, x = block.forward_with_intermediate(x)
                low_taps = [mid, x]
            else:
                x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        mid_tap = x

        dec_outputs = []
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([x, skip], dim=1))
            dec_outputs.append(x)

        hints = {"high": dec_outputs[-2:], "mid": [mid_tap], "low": low_taps}
        return finalize(self.head(x), hints[self.config.hint_layer_set])
