"""Fixed-weight convolutional feature pyramid for the contextual loss.

Ten 3x3 stride-1 convolutions with ReLU, downsampled by 2x2 average pooling
after layers 1 and 4 and before layer 8. Taps sit after layers 6, 7 and 8:
for 256x256 inputs at width 64 they are (256, 64, 64), (256, 64, 64) and
(512, 32, 32).

Weights are frozen. The default source is a fixed-seed random init whose
kernels are symmetrized along the horizontal axis; together with stride-1
convs and 2x2 pooling this makes the pyramid exactly equivariant to
horizontal flips, which is convenient for testing and harmless for the
all-pairs similarity the contextual loss computes. A pretrained weight file
(checkpoint archive with matching keys) can be supplied instead.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .. import io as cio

_PLAN = [  # (channel multiple of width/1, pool_before)
    (1, False), (1, True), (2, False), (2, False), (4, True),
    (4, False), (4, False), (8, True), (8, False), (8, False),
]
TAP_LAYERS = (5, 6, 7)  # indices into _PLAN (0-based): layers 6, 7, 8


class PerceptualExtractor(nn.Module):
    PAPER_WIDTH = 64

    def __init__(self, in_channels=1, width=8, weights_source="fixed_seed_random",
                 seed=1234, weights_path=None):
        super().__init__()
        self.width = width
        convs = []
        c_prev = in_channels
        for mult, _pool in _PLAN:
            convs.append(nn.Conv2d(c_prev, mult * width, 3, padding=1))
            c_prev = mult * width
        self.convs = nn.ModuleList(convs)
        self.pool = nn.AvgPool2d(2)

        if weights_source == "fixed_seed_random":
            gen = torch.Generator().manual_seed(seed)
            for conv in self.convs:
                fan_in = conv.weight.shape[1] * 9
                w = torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5
                conv.weight.data.copy_(0.5 * (w + w.flip(-1)))  # horizontal symmetry
                conv.bias.data.zero_()
        elif weights_source == "pretrained_file":
            meta, tensors = cio.load_checkpoint(weights_path)
            state = {k: torch.from_numpy(v) for k, v in tensors.items()}
            self.load_state_dict(state)
        else:
            raise ValueError(f"unknown weights_source {weights_source!r}")
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        h, w = image.shape[-2:]
        if min(h, w) < 32 or h % 8 or w % 8:
            raise ValueError(
                f"perceptual extractor needs spatial dims >= 32 and divisible by 8, got {h}x{w}")
        taps = []
        x = image
        for i, ((_mult, pool_before), conv) in enumerate(zip(_PLAN, self.convs)):
            if pool_before:
                x = self.pool(x)
            x = torch.relu(conv(x))
            if i in TAP_LAYERS:
                taps.append(x)
        return taps

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}


def perceptual_features(extractor: PerceptualExtractor, image: torch.Tensor) -> list[torch.Tensor]:
    return extractor(image)
