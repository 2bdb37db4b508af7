"""Synthetic two-modality phantom corpus.

Each case is a 2D slice: an elliptical body with smooth tissue texture, a
single tumor blob and optionally extra organ blobs. The same anatomy can be
rendered in a "student" or "teacher" modality; the modalities differ in
their tissue intensity transfer curve and in how strongly the tumor stands
out from surrounding tissue. Student and teacher corpora are generated from
disjoint anatomy seed streams, so there is no pixel correspondence between
them (unpaired by construction).

Contrast profiles
-----------------
``informative_teacher``  teacher tumor contrast >= 3x student contrast
``weak_teacher``         roles swapped (teacher/student ratio <= 1/3)
``equal_teacher``        equal contrast, different transfer curves
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errors import ConfigurationError
from .. import io as cio

VALID_SIZES = (64, 128, 256)

# per profile: (student tumor offset, teacher tumor offset) and the edge
# smoothing sigma of the offset field per modality. The informative teacher
# pairs a faint fuzzy-edged student rendering with a strong sharp-edged
# teacher rendering; measured contrast tracks the offsets closely because
# texture and noise are zero-mean.
_PROFILE_DELTAS = {
    "informative_teacher": (0.11, 0.45),
    "weak_teacher": (0.24, 0.04),
    "equal_teacher": (0.26, 0.26),
}
_PROFILE_EDGE_SIGMA = {
    "informative_teacher": (2.0, 0.6),
    "weak_teacher": (1.6, 1.2),
    "equal_teacher": (1.2, 1.2),
}

# per-case acquisition nuisance (gain, offset ranges) applied to the student
# modality: scanner-like intensity variation that the canonical teacher
# modality does not carry
_STUDENT_GAIN_RANGE = (0.75, 1.3)
_STUDENT_OFFSET_RANGE = (-0.08, 0.08)

_MODALITY_CODE = {"student": 1, "teacher": 2}


@dataclass
class Phantom:
    """One anatomy: base tissue map plus masks, before modality rendering."""

    anatomy_seed: int
    canvas: np.ndarray          # float64 in [0, 1], tissue map (0 outside body)
    tumor_mask: np.ndarray      # bool H x W, single 4-connected component
    organ_masks: list[np.ndarray] = field(default_factory=list)
    body_mask: np.ndarray = None


@dataclass
class Sample:
    image: np.ndarray           # float64 H x W
    mask: np.ndarray            # int64 H x W, 0 = background
    modality: str               # "student" | "teacher"
    case_id: str
    slice_index: int = 0


@dataclass
class SplitData:
    student: list[Sample]
    teacher: list[Sample]
    # clean teacher rendering of each *student* anatomy, for paired synthesis
    # metrics only (never used in training)
    paired_teacher: dict[str, np.ndarray]


@dataclass
class PhantomCorpus:
    profile: str
    seed: int
    size: int
    noise_sigma: float
    splits: dict[str, SplitData]


def _smooth_noise(rng, size, sigma, amplitude):
    field_ = rng.standard_normal((size, size))
    field_ = ndimage.gaussian_filter(field_, sigma)
    scale = field_.std()
    if scale > 0:
        field_ = field_ / scale
    return field_ * amplitude


def _ellipse_mask(size, center, radii, angle_rad):
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    dy, dx = yy - center[0], xx - center[1]
    ca, sa = np.cos(angle_rad), np.sin(angle_rad)
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy
    return (u / radii[1]) ** 2 + (v / radii[0]) ** 2 <= 1.0


def _single_component(mask: np.ndarray) -> bool:
    labels, n = ndimage.label(mask)  # default structure = 4-connectivity
    return n == 1


def make_phantom(anatomy_seed: int, size: int, n_organs: int = 0) -> Phantom:
    """Deterministic anatomy from a seed: body, texture, tumor, organs."""
    rng = np.random.default_rng(anatomy_seed)
    center = (size / 2 + rng.uniform(-size * 0.03, size * 0.03),
              size / 2 + rng.uniform(-size * 0.03, size * 0.03))
    body_radii = (rng.uniform(0.34, 0.42) * size, rng.uniform(0.36, 0.45) * size)
    body = _ellipse_mask(size, center, body_radii, rng.uniform(0, np.pi))

    tissue = 0.5 + _smooth_noise(rng, size, sigma=size / 16, amplitude=0.05)
    # gentle radial shading so the body is not flat
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    r2 = ((yy - center[0]) / body_radii[0]) ** 2 + ((xx - center[1]) / body_radii[1]) ** 2
    tissue = tissue - 0.08 * r2
    canvas = np.clip(tissue, 0.0, 1.0) * body

    interior = ndimage.binary_erosion(body, iterations=max(2, size // 24))
    tumor = _place_blob(rng, size, interior, radius_range=(3.0, max(3.5, size / 8)))

    organs: list[np.ndarray] = []
    occupied = tumor.copy()
    for _ in range(n_organs):
        forbidden = ndimage.binary_dilation(occupied, iterations=2)
        organ = _place_blob(rng, size, interior & ~forbidden,
                            radius_range=(3.0, max(3.5, size / 9)))
        organs.append(organ)
        occupied |= organ
    return Phantom(anatomy_seed=anatomy_seed, canvas=canvas, tumor_mask=tumor,
                   organ_masks=organs, body_mask=body)


def _place_blob(rng, size, allowed, radius_range, min_area=16, tries=200):
    candidates = np.argwhere(allowed)
    if candidates.size == 0:
        raise ConfigurationError("phantom body too small to place a blob")
    for _ in range(tries):
        cy, cx = candidates[rng.integers(len(candidates))]
        radii = (rng.uniform(*radius_range), rng.uniform(*radius_range))
        blob = _ellipse_mask(size, (float(cy), float(cx)), radii, rng.uniform(0, np.pi))
        blob &= allowed
        if blob.sum() >= min_area and _single_component(blob):
            return blob
    raise ConfigurationError("could not place a blob satisfying the invariants")


# -- modality rendering ------------------------------------------------------

def _transfer(kind: str, tissue: np.ndarray) -> np.ndarray:
    if kind == "linear":
        return 0.20 + 0.55 * tissue
    if kind == "inverted":
        return 0.80 - 0.55 * tissue
    if kind == "gamma":
        return 0.15 + 0.65 * np.power(np.clip(tissue, 0, 1), 1.8)
    raise ConfigurationError(f"unknown transfer curve {kind!r}")


_MODALITY_STYLE = {
    # transfer curve and air (outside body) level per modality
    "student": {"transfer": "linear", "air": 0.04},
    "teacher": {"transfer": "inverted", "air": 0.92},
}


def render_modality(phantom: Phantom, modality: str, tumor_delta: float,
                    noise_sigma: float, noise_seed, organ_delta: float = 0.3,
                    edge_sigma: float = 0.7, gain: float = 1.0,
                    intensity_offset: float = 0.0) -> np.ndarray:
    """Render one anatomy in one modality; noise is seeded explicitly.

    ``edge_sigma`` smooths the structure offset field: large values give
    fuzzy, hard-to-contour boundaries, small values near-binary edges.
    ``gain``/``intensity_offset`` apply an acquisition-style affine intensity
    change to the whole rendered image.
    """
    style = _MODALITY_STYLE[modality]
    body = phantom.body_mask
    img = np.full(phantom.canvas.shape, style["air"], dtype=np.float64)
    img[body] = _transfer(style["transfer"], phantom.canvas)[body]

    offset = _structure_offset(phantom.tumor_mask, tumor_delta, edge_sigma)
    for k, organ in enumerate(phantom.organ_masks):
        sign = 1.0 if k % 2 == 0 else -1.0
        offset += _structure_offset(organ, sign * organ_delta, edge_sigma)
    img = img + offset
    img = gain * img + intensity_offset
    if noise_sigma > 0:
        img = img + np.random.default_rng(noise_seed).normal(0.0, noise_sigma, img.shape)
    return np.clip(img, 0.0, 1.0)


def _structure_offset(mask: np.ndarray, delta: float, edge_sigma: float) -> np.ndarray:
    """Smoothed intensity offset whose in-mask mean is pinned to 0.85*delta,
    so the measured tumor/background contrast tracks delta independently of
    structure size and edge fuzziness."""
    field = ndimage.gaussian_filter(mask.astype(np.float64), edge_sigma)
    in_mask = field[mask].mean()
    if in_mask > 0:
        field = field * (0.85 / in_mask)
    return delta * field


def _label_mask(phantom: Phantom) -> np.ndarray:
    mask = np.zeros(phantom.canvas.shape, dtype=np.int64)
    mask[phantom.tumor_mask] = 1
    for k, organ in enumerate(phantom.organ_masks):
        mask[organ] = 2 + k
    return mask


def generate_phantom_corpus(n_cases: int, contrast_profile: str, seed: int,
                            size: int, noise_sigma: float = 0.03,
                            n_organs: int | None = None,
                            case_prefix: str = "") -> SplitData:
    """Two unpaired single-slice case sets, one per modality.

    Anatomy seeds are disjoint between modalities. For every student case a
    clean (noise-free) teacher rendering of the same anatomy is kept as the
    paired reference for synthesis metrics.
    """
    if size not in VALID_SIZES:
        raise ConfigurationError(f"size must be one of {VALID_SIZES}, got {size}")
    if n_cases < 1:
        raise ConfigurationError("n_cases must be >= 1")
    if contrast_profile not in _PROFILE_DELTAS:
        raise ConfigurationError(f"unknown contrast_profile {contrast_profile!r}")
    delta_student, delta_teacher = _PROFILE_DELTAS[contrast_profile]
    if n_organs is None:
        n_organs = 2 if contrast_profile == "equal_teacher" else 0

    samples = {"student": [], "teacher": []}
    paired: dict[str, np.ndarray] = {}
    deltas = {"student": delta_student, "teacher": delta_teacher}
    sigma_student, sigma_teacher = _PROFILE_EDGE_SIGMA[contrast_profile]
    sigmas = {"student": sigma_student, "teacher": sigma_teacher}
    for modality in ("student", "teacher"):
        for i in range(n_cases):
            ss = np.random.SeedSequence([seed, _MODALITY_CODE[modality], i])
            anatomy_seed, noise_seed, nuisance_seed = ss.spawn(3)
            phantom = make_phantom(int(anatomy_seed.generate_state(1)[0]), size, n_organs)
            gain, intensity_offset = 1.0, 0.0
            if modality == "student":
                nuisance_rng = np.random.default_rng(nuisance_seed)
                gain = nuisance_rng.uniform(*_STUDENT_GAIN_RANGE)
                intensity_offset = nuisance_rng.uniform(*_STUDENT_OFFSET_RANGE)
            image = render_modality(phantom, modality, deltas[modality],
                                    noise_sigma, noise_seed, edge_sigma=sigmas[modality],
                                    gain=gain, intensity_offset=intensity_offset)
            case_id = f"{case_prefix}{modality[0]}{i:04d}"
            samples[modality].append(Sample(image=image, mask=_label_mask(phantom),
                                            modality=modality, case_id=case_id))
            if modality == "student":
                paired[case_id] = render_modality(phantom, "teacher", delta_teacher,
                                                  0.0, noise_seed,
                                                  edge_sigma=sigma_teacher)
    return SplitData(student=samples["student"], teacher=samples["teacher"],
                     paired_teacher=paired)


def build_phantom_corpus(counts: dict[str, int], contrast_profile: str, seed: int,
                         size: int, noise_sigma: float = 0.03,
                         n_organs: int | None = None) -> PhantomCorpus:
    """Corpus with train/val/test splits drawn from disjoint seed streams."""
    splits = {}
    for k, name in enumerate(sorted(counts)):
        splits[name] = generate_phantom_corpus(
            counts[name], contrast_profile, seed * 10007 + 13 * (k + 1), size,
            noise_sigma=noise_sigma, n_organs=n_organs, case_prefix=f"{name}_")
    return PhantomCorpus(profile=contrast_profile, seed=seed, size=size,
                         noise_sigma=noise_sigma, splits=splits)


def modality_contrast(samples: list[Sample]) -> float:
    """Mean |tumor - background| intensity difference across cases.

    Background is body tissue: anything that is neither air (taken as the
    lowest/highest decile band outside labeled structures) nor a labeled
    structure. For phantom samples we approximate the body as pixels whose
    intensity differs from the air plateau; in practice the labeled mask and
    its complement inside the convex body dominate the estimate, so we simply
    exclude a border margin and labeled pixels.
    """
    vals = []
    for s in samples:
        tumor = s.mask == 1
        if not tumor.any():
            continue
        body = _estimate_body(s.image)
        background = body & (s.mask == 0)
        if background.sum() == 0:
            continue
        vals.append(abs(s.image[tumor].mean() - s.image[background].mean()))
    if not vals:
        raise ValueError("no cases with tumor pixels")
    return float(np.mean(vals))


def _estimate_body(image: np.ndarray) -> np.ndarray:
    # air is rendered as a flat plateau filling the outside; its level is the
    # border median, and tissue sits well away from it in every modality
    border = np.r_[image[0], image[-1], image[:, 0], image[:, -1]]
    air = np.median(border)
    body = np.abs(image - air) > 0.12
    return ndimage.binary_erosion(body, iterations=2)


# -- persistence -------------------------------------------------------------

def save_corpus(corpus: PhantomCorpus, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    split_ids = {}
    for split_name, data in sorted(corpus.splits.items()):
        ids = []
        for sample in data.student + data.teacher:
            case_dir = out / "cases" / sample.case_id
            case_dir.mkdir(parents=True, exist_ok=True)
            cio.write_image16(case_dir / f"slice_{sample.slice_index:03d}.png",
                              sample.image,
                              {"modality": sample.modality, "case_id": sample.case_id,
                               "slice_index": sample.slice_index, "split": split_name,
                               "spacing_mm": [1.0, 1.0]})
            cio.write_mask(case_dir / f"mask_{sample.slice_index:03d}.png", sample.mask)
            ids.append(sample.case_id)
        for case_id, image in sorted(data.paired_teacher.items()):
            case_dir = out / "cases" / case_id
            cio.write_image16(case_dir / "paired_teacher_000.png", image,
                              {"modality": "teacher", "case_id": case_id,
                               "slice_index": 0, "split": split_name,
                               "spacing_mm": [1.0, 1.0], "role": "paired_reference"})
        split_ids[split_name] = ids
    cio.write_manifest(out / "manifest.json", split_ids)
    meta = {"profile": corpus.profile, "seed": corpus.seed, "size": corpus.size,
            "noise_sigma": corpus.noise_sigma}
    (out / "corpus.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_corpus(corpus_dir) -> PhantomCorpus:
    root = Path(corpus_dir)
    meta = json.loads((root / "corpus.json").read_text())
    split_ids = cio.read_manifest(root / "manifest.json")
    splits = {}
    for split_name, ids in split_ids.items():
        student, teacher, paired = [], [], {}
        for case_id in ids:
            case_dir = root / "cases" / case_id
            for png in sorted(case_dir.glob("slice_*.png")):
                image, sidecar = cio.read_image16(png)
                idx = sidecar["slice_index"]
                mask = cio.read_mask(case_dir / f"mask_{idx:03d}.png")
                sample = Sample(image=image, mask=mask, modality=sidecar["modality"],
                                case_id=case_id, slice_index=idx)
                (student if sample.modality == "student" else teacher).append(sample)
            paired_png = case_dir / "paired_teacher_000.png"
            if paired_png.exists():
                paired[case_id], _ = cio.read_image16(paired_png)
        splits[split_name] = SplitData(student=student, teacher=teacher,
                                       paired_teacher=paired)
    return PhantomCorpus(profile=meta["profile"], seed=meta["seed"], size=meta["size"],
                         noise_sigma=meta["noise_sigma"], splits=splits)
