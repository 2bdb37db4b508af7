"""Intensity preprocessing and slice selection.

``preprocess`` clips to a configured window and rescales linearly to
[-1, 1], optionally after landmark-based histogram standardization against a
stored corpus template (decile landmarks, piecewise-linear remap).

``extract_lung_slices`` reproduces the usual air-threshold slice picker for
Hounsfield-unit volumes: a slice qualifies when, below the threshold, at
least two connected components remain after discarding components touching
the image border (exterior air).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from ..errors import ConfigurationError
from .phantom import Sample

_LANDMARK_PERCENTILES = (0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100)


@dataclass
class HistogramTemplate:
    """Decile landmarks averaged over a corpus of images."""

    landmarks: np.ndarray

    @classmethod
    def fit(cls, images: list[np.ndarray]) -> "HistogramTemplate":
        if not images:
            raise ConfigurationError("cannot fit a histogram template on no images")
        marks = np.mean([np.percentile(img, _LANDMARK_PERCENTILES) for img in images], axis=0)
        return cls(landmarks=np.asarray(marks, dtype=np.float64))

    def apply(self, image: np.ndarray) -> np.ndarray:
        src = np.percentile(image, _LANDMARK_PERCENTILES)
        # collapse duplicate source landmarks (constant regions) for np.interp
        src, keep = np.unique(src, return_index=True)
        return np.interp(image, src, self.landmarks[keep])


def clip_rescale(image: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Clip to [lo, hi] then map linearly onto [-1, 1]."""
    if lo >= hi:
        raise ConfigurationError(f"clip window requires lo < hi, got ({lo}, {hi})")
    clipped = np.clip(image, lo, hi)
    return 2.0 * (clipped - lo) / (hi - lo) - 1.0


def preprocess(sample: Sample, clip: tuple[float, float], standardize: bool = False,
               template: HistogramTemplate | None = None) -> Sample:
    lo, hi = clip
    image = sample.image
    if standardize:
        if template is None:
            raise ConfigurationError("standardize=True requires a histogram template")
        image = template.apply(image)
    return replace(sample, image=clip_rescale(image, lo, hi))


def extract_lung_slices(volume: np.ndarray, threshold: float = -300.0,
                        min_area: int = 1) -> list[int]:
    """Indices of slices with >= 2 interior air components below ``threshold``."""
    volume = np.asarray(volume)
    if volume.size == 0:
        raise ValueError("empty volume")
    if volume.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {volume.shape}")
    picked = []
    for idx in range(volume.shape[0]):
        air = volume[idx] < threshold
        labels, n = ndimage.label(air)  # 4-connectivity
        if n < 2:
            continue
        border = np.zeros_like(air)
        border[0, :] = border[-1, :] = True
        border[:, 0] = border[:, -1] = True
        exterior = np.unique(labels[border & air])
        interior = [k for k in range(1, n + 1)
                    if k not in exterior and (labels == k).sum() >= min_area]
        if len(interior) >= 2:
            picked.append(idx)
    return picked
