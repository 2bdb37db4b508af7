"""Densely connected FCN: 4-layer dense blocks, 5 transitions down and up.

With growth rate g the first convolution emits 4g channels and every dense
block adds 4g more, so the accumulated width after down-block k is 4g(1+k).
The up path upsamples only each block's new features; the transposed conv
into the half-resolution stage emits 3g channels and all others 4g, which
makes the last two concatenations 19g and 16g wide (228 and 192 at the
published growth rate 12).
"""

from __future__ import annotations

import torch
from torch import nn

from .common import SegNetConfig, SegOutput, ConvBNRelu, check_divisible, finalize


class DenseBlock(nn.Module):
    def __init__(self, c_in, growth, n_layers=4):
        super().__init__()
        self.layers = nn.ModuleList(
            [ConvBNRelu(c_in + i * growth, growth) for i in range(n_layers)])

    def forward(self, x):
        new = []
        for layer in self.layers:
            out = layer(torch.cat([x, *new], dim=1) if new else x)
            new.append(out)
        return torch.cat(new, dim=1)  # new features only


class TransitionDown(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = ConvBNRelu(channels, channels, kernel=1)
        self.pool = nn.MaxPool2d(2)

    def forward(self, x):
        return self.pool(self.conv(x))


class DenseFCN(nn.Module):
    DIVISOR = 32

    def __init__(self, config: SegNetConfig):
        super().__init__()
        self.config = config
        g = max(1, round(config.base_width / 4))
        self.growth = g
        f = 4 * g

        self.stem = nn.Conv2d(config.in_channels, f, kernel_size=3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.down_trans = nn.ModuleList()
        ch = f
        self.skip_channels = []
        for _ in range(5):
            self.down_blocks.append(DenseBlock(ch, g))
            ch += 4 * g
            self.skip_channels.append(ch)
            self.down_trans.append(TransitionDown(ch))
        self.bottleneck = DenseBlock(ch, g)

        tu_out = [4 * g, 4 * g, 4 * g, 3 * g, 4 * g]
        self.up_trans = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        prev_new = 4 * g
        for out_c, skip_c in zip(tu_out, reversed(self.skip_channels)):
            self.up_trans.append(nn.ConvTranspose2d(prev_new, out_c, kernel_size=3,
                                                    stride=2, padding=1, output_padding=1))
            self.up_blocks.append(DenseBlock(skip_c + out_c, g))
            prev_new = 4 * g
        final_ch = self.skip_channels[0] + tu_out[-1] + 4 * g  # 16g
        self.head = nn.Conv2d(final_ch, config.n_classes, kernel_size=1)

    def forward(self, x: torch.Tensor) -> SegOutput:
        check_divisible(x, self.DIVISOR, "densefcn")
        x = self.stem(x)
        stem_out = x
        skips = []
        first_layer_out = None
        for i, (block, trans) in enumerate(zip(self.down_blocks, self.down_trans)):
            new = block(x)
            if i == 0:
                first_layer_out = new[:, : self.growth]
            x = torch.cat([x, new], dim=1)
            skips.append(x)
            x = trans(x)
        bottleneck_new = self.bottleneck(x)
        mid_tap = torch.cat([x, bottleneck_new], dim=1)

        new = bottleneck_new
        up_concats = []
        for trans, block, skip in zip(self.up_trans, self.up_blocks, reversed(skips)):
            up = trans(new)
            merged = torch.cat([skip, up], dim=1)
            new = block(merged)
            up_concats.append(torch.cat([merged, new], dim=1))

        hints = {"high": up_concats[-2:], "mid": [mid_tap],
                 "low": [stem_out, first_layer_out]}
        return finalize(self.head(up_concats[-1]), hints[self.config.hint_layer_set])
