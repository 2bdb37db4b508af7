"""Encoder-decoder with per-resolution residual feature streams.

A residual stream is spawned from each encoder stage output (before
pooling), carrying features at that resolution through the network. Each
time the main path reaches a deeper stage, every live stream is refined by a
residual connection unit (RCU): the main activation is resized to the
stream's resolution, aligned to its channel count with a 1x1 conv, fused by
a 3x3 conv and added back to the stream. The decoder consumes the refined
stream at each resolution in place of a plain skip.

Channel plan (width w, published shapes at w = 64): encoder w..8w,
bottleneck 16w, decoder 8w, 4w, 2w, w - so the last two decoder outputs are
2w @ H/2 and w @ H (128 @ 128^2 and 64 @ 256^2 for 256-inputs at w = 64).
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .common import SegNetConfig, SegOutput, ConvBNRelu, DoubleConv, check_divisible, finalize


class RCU(nn.Module):
    """Residual connection unit: fuse a stream with a deeper main activation."""

    def __init__(self, stream_ch, main_ch):
        super().__init__()
        self.align = nn.Conv2d(main_ch, stream_ch, kernel_size=1)
        self.fuse = ConvBNRelu(2 * stream_ch, stream_ch)

    def forward(self, stream, main):
        main = F.interpolate(main, size=stream.shape[-2:], mode="bilinear",
                             align_corners=False)
        return stream + self.fuse(torch.cat([stream, self.align(main)], dim=1))


class MRRN(nn.Module):
    DIVISOR = 16

    def __init__(self, config: SegNetConfig):
        super().__init__()
        self.config = config
        w = config.base_width
        enc_ch = [w, 2 * w, 4 * w, 8 * w]
        bott_ch = 16 * w
        dec_ch = [8 * w, 4 * w, 2 * w, w]

        self.enc = nn.ModuleList()
        c_prev = config.in_channels
        for c in enc_ch:
            self.enc.append(DoubleConv(c_prev, c))
            c_prev = c
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = DoubleConv(enc_ch[-1], bott_ch)

        # rcus[s] refines stream s with mains from deeper encoder stages and
        # the bottleneck, in that order
        self.rcus = nn.ModuleList()
        for s, sc in enumerate(enc_ch):
            mains = enc_ch[s + 1:] + [bott_ch]
            self.rcus.append(nn.ModuleList([RCU(sc, mc) for mc in mains]))

        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        c_prev = bott_ch
        for c, stream_c in zip(dec_ch, reversed(enc_ch)):
            self.up.append(nn.ConvTranspose2d(c_prev, c, kernel_size=2, stride=2))
            self.dec.append(DoubleConv(c + stream_c, c))
            c_prev = c
        self.head = nn.Conv2d(dec_ch[-1], config.n_classes, kernel_size=1)

    def forward(self, x: torch.Tensor) -> SegOutput:
        check_divisible(x, self.DIVISOR, "mrrn")
        streams = []
        low_taps = []
        rcu_iters = []
        for i, block in enumerate(self.enc):
            if i == 0:
                mid, x = block.forward_with_intermediate(x)
                low_taps = [mid, x]
            else:
                x = block(x)
            # refine older streams with this deeper activation
            for s in range(i):
                streams[s] = self.rcus[s][rcu_iters[s]](streams[s], x)
                rcu_iters[s] += 1
            streams.append(x)
            rcu_iters.append(0)
            x = self.pool(x)
        x = self.bottleneck(x)
        for s in range(len(streams)):
            streams[s] = self.rcus[s][rcu_iters[s]](streams[s], x)
        mid_tap = x

        dec_outputs = []
        for up, dec, stream in zip(self.up, self.dec, reversed(streams)):
            x = up(x)
            x = dec(torch.cat([x, stream], dim=1))
            dec_outputs.append(x)

        hints = {"high": dec_outputs[-2:], "mid": [mid_tap], "low": low_taps}
        return finalize(self.head(x), hints[self.config.hint_layer_set])
