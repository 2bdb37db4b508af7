"""Geometric augmentation: flip, scale, rotation, elastic deformation.

One spatial transform is sampled per call and applied identically to the
image (bilinear) and the mask (nearest neighbour). A fully degenerate policy
(flip probability 0, scale range (1, 1), rotation (0, 0), elastic disabled
or zero magnitude) returns the input unchanged, and a pure horizontal flip
is an exact array mirror.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from ..errors import ConfigurationError
from .phantom import Sample


@dataclass
class ElasticParams:
    grid_spacing: float = 32.0     # pixels between displacement-grid nodes
    magnitude_sigma: float = 4.0   # std-dev of node displacements, pixels


@dataclass
class AugmentationPolicy:
    flip_prob: float = 0.5
    scale_range: tuple[float, float] = (0.9, 1.1)
    rotation_range_deg: tuple[float, float] = (-10.0, 10.0)
    elastic: ElasticParams = field(default_factory=ElasticParams)
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigurationError("flip_prob must be in [0, 1]")
        for name, rng in (("scale_range", self.scale_range),
                          ("rotation_range_deg", self.rotation_range_deg)):
            if rng[0] > rng[1]:
                raise ConfigurationError(f"{name} must satisfy min <= max, got {rng}")

    @classmethod
    def identity(cls) -> "AugmentationPolicy":
        return cls(flip_prob=0.0, scale_range=(1.0, 1.0), rotation_range_deg=(0.0, 0.0),
                   elastic=ElasticParams(magnitude_sigma=0.0))


def _elastic_field(rng, shape, params: ElasticParams):
    h, w = shape
    gh = max(int(np.ceil(h / params.grid_spacing)) + 1, 2)
    gw = max(int(np.ceil(w / params.grid_spacing)) + 1, 2)
    disp = rng.normal(0.0, params.magnitude_sigma, size=(2, gh, gw))
    zoom = (h / gh, w / gw)
    dy = ndimage.zoom(disp[0], zoom, order=3)[:h, :w]
    dx = ndimage.zoom(disp[1], zoom, order=3)[:h, :w]
    return dy, dx


def augment(sample: Sample, policy: AugmentationPolicy, rng: np.random.Generator) -> Sample:
    if not policy.enabled:
        return sample
    # draw the full parameter tuple up-front so RNG consumption is fixed
    do_flip = rng.uniform() < policy.flip_prob
    scale = rng.uniform(*policy.scale_range)
    angle = np.deg2rad(rng.uniform(*policy.rotation_range_deg))
    elastic_on = policy.elastic is not None and policy.elastic.magnitude_sigma > 0

    image, mask = sample.image, sample.mask
    if do_flip:
        image = image[:, ::-1].copy()
        mask = mask[:, ::-1].copy()
    if scale == 1.0 and angle == 0.0 and not elastic_on:
        if not do_flip:
            return sample
        return replace(sample, image=image, mask=mask)

    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    # inverse map: output pixel -> input coordinate (rotate by -angle, unscale)
    ca, sa = np.cos(angle), np.sin(angle)
    dy, dx = (yy - cy) / scale, (xx - cx) / scale
    src_y = cy + ca * dy - sa * dx
    src_x = cx + sa * dy + ca * dx
    if elastic_on:
        ey, ex = _elastic_field(rng, (h, w), policy.elastic)
        src_y = src_y + ey
        src_x = src_x + ex
    coords = np.stack([src_y, src_x])
    out_image = ndimage.map_coordinates(image, coords, order=1, mode="nearest")
    out_mask = ndimage.map_coordinates(mask, coords, order=0, mode="nearest")
    return replace(sample, image=out_image, mask=out_mask.astype(mask.dtype))
