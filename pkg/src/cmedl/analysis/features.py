"""Hint-tap feature harvesting and feature-map dumps.

Per tumor-bearing slice, the harvester crops a patch around the tumor
bounding box, runs the network, upsamples the coarser of the last two hint
taps to the finer resolution, concatenates them channel-wise and samples a
balanced set of tumor/background per-pixel feature vectors (capped per
case).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch.nn import functional as F
from PIL import Image

from ..data.phantom import Sample
from ..data.preprocess import clip_rescale

PER_CASE_PIXEL_CAP = 35000


@dataclass
class FeatureSample:
    vector: np.ndarray
    label: str        # "tumor" | "background"
    case_id: str


def _concat_taps(hints: list[torch.Tensor]) -> torch.Tensor:
    """Upsample every tap to the finest tap resolution and concatenate."""
    target = max(h.shape[-2:] for h in hints)
    aligned = [h if h.shape[-2:] == tuple(target)
               else F.interpolate(h, size=tuple(target), mode="bilinear", align_corners=False)
               for h in hints]
    return torch.cat(aligned, dim=1)


def harvest_features(net, samples: list[Sample], patch: int = 160,
                     cap: int = PER_CASE_PIXEL_CAP, seed: int = 0,
                     tumor_label: int = 1) -> list[FeatureSample]:
    net.eval()
    out: list[FeatureSample] = []
    rng = np.random.default_rng(seed)
    for sample in samples:
        tumor = sample.mask == tumor_label
        if not tumor.any():
            continue
        h, w = sample.image.shape
        ph, pw = min(patch, h), min(patch, w)
        ys, xs = np.nonzero(tumor)
        cy = int((ys.min() + ys.max()) // 2)
        cx = int((xs.min() + xs.max()) // 2)
        y0 = min(max(cy - ph // 2, 0), h - ph)
        x0 = min(max(cx - pw // 2, 0), w - pw)

        image = clip_rescale(sample.image, 0.0, 1.0)
        with torch.no_grad():
            seg_out = net(torch.from_numpy(image).float()[None, None])
            feats = _concat_taps(seg_out.hints[-2:])[0].numpy()
        feats = feats[:, y0:y0 + ph, x0:x0 + pw]
        patch_tumor = tumor[y0:y0 + ph, x0:x0 + pw]

        tumor_idx = np.flatnonzero(patch_tumor.ravel())
        bg_idx = np.flatnonzero(~patch_tumor.ravel())
        m = min(len(tumor_idx), len(bg_idx), cap // 2)
        if m == 0:
            continue
        tumor_pick = rng.choice(tumor_idx, size=m, replace=False)
        bg_pick = rng.choice(bg_idx, size=m, replace=False)
        vectors = feats.reshape(feats.shape[0], -1).T
        for idx in tumor_pick:
            out.append(FeatureSample(vectors[idx].copy(), "tumor", sample.case_id))
        for idx in bg_pick:
            out.append(FeatureSample(vectors[idx].copy(), "background", sample.case_id))
    return out


def subsample_balanced(features: list[FeatureSample], total: int,
                       seed: int = 0) -> list[FeatureSample]:
    """Deterministic balanced subsample across the whole harvest."""
    rng = np.random.default_rng(seed)
    tumor = [f for f in features if f.label == "tumor"]
    bg = [f for f in features if f.label == "background"]
    m = min(len(tumor), len(bg), total // 2)
    pick_t = rng.choice(len(tumor), size=m, replace=False)
    pick_b = rng.choice(len(bg), size=m, replace=False)
    return [tumor[i] for i in pick_t] + [bg[i] for i in pick_b]


def feature_matrix(features: list[FeatureSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([f.vector for f in features])
    labels = np.array([1 if f.label == "tumor" else 0 for f in features])
    return x, labels


def dump_feature_maps(net, image: np.ndarray, out_path, layer: int = -1,
                      channels: range = range(24), grid_cols: int = 6,
                      tile_pad: int = 1) -> np.ndarray:
    """Write a grayscale grid PNG of per-channel min-max normalized maps.

    Constant channels render as mid-gray. Returns the grid array (uint8).
    """
    net.eval()
    with torch.no_grad():
        seg_out = net(torch.from_numpy(np.asarray(image, dtype=np.float32))[None, None])
    tap = seg_out.hints[layer][0].numpy()
    chans = [c for c in channels if c < tap.shape[0]]
    n = len(chans)
    cols = min(grid_cols, n)
    rows = math.ceil(n / cols)
    th, tw = tap.shape[1], tap.shape[2]
    grid = np.zeros((rows * (th + tile_pad) - tile_pad,
                     cols * (tw + tile_pad) - tile_pad), dtype=np.uint8)
    for k, c in enumerate(chans):
        fmap = tap[c]
        lo, hi = fmap.min(), fmap.max()
        if hi - lo < 1e-12:
            tile = np.full((th, tw), 128, dtype=np.uint8)
        else:
            tile = np.round((fmap - lo) / (hi - lo) * 255.0).astype(np.uint8)
        r, col = divmod(k, cols)
        grid[r * (th + tile_pad): r * (th + tile_pad) + th,
             col * (tw + tile_pad): col * (tw + tile_pad) + tw] = tile
    Image.fromarray(grid, mode="L").save(out_path)
    return grid
