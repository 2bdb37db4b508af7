"""Evaluation metrics: overlap and surface accuracy for masks, synthesis
fidelity for images, robustness and significance statistics.

Surface metrics operate on boundary pixel centers (mask pixels with a
4-neighbour background pixel, counting outside-of-image as background),
scaled by the pixel spacing. HD95 is the 95th percentile of the pooled
symmetric nearest surface distances. A pair with an empty mask has no
surface, so HD95/surface-DSC are reported as NaN (missing) rather than 0;
two empty masks count as perfect agreement for the overlap scores.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d
from scipy.stats import norm, rankdata

PSNR_CAP_DB = 99.0


@dataclass
class MaskPair:
    prediction: np.ndarray
    reference: np.ndarray
    spacing: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        self.prediction = np.asarray(self.prediction).astype(bool)
        self.reference = np.asarray(self.reference).astype(bool)
        if self.prediction.shape != self.reference.shape:
            raise ValueError("prediction and reference shapes differ")
        if min(self.spacing) <= 0:
            raise ValueError("spacing must be positive")


@dataclass
class MetricRecord:
    case_id: str
    structure: str
    dsc: float
    sdsc: float = math.nan
    hd95_mm: float = math.nan
    sdsc_tolerance_mm: float = math.nan
    kl: float = math.nan
    psnr: float = math.nan
    ssim: float = math.nan
    extras: dict = field(default_factory=dict)


# -- overlap and surface metrics ------------------------------------------------

def dsc(pair: MaskPair) -> float:
    p, g = pair.prediction, pair.reference
    total = p.sum() + g.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(p, g).sum() / total)


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour background pixel (pixels on
    the array border count their outside neighbours as background)."""
    m = np.asarray(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior


def _boundary_points(mask: np.ndarray, spacing) -> np.ndarray:
    pts = np.argwhere(boundary_mask(mask)).astype(np.float64)
    return pts * np.asarray(spacing, dtype=np.float64)


def _nearest_distances(from_pts: np.ndarray, to_pts: np.ndarray,
                       chunk: int = 512) -> np.ndarray:
    out = np.empty(len(from_pts))
    for i in range(0, len(from_pts), chunk):
        block = from_pts[i:i + chunk]
        d2 = ((block[:, None, :] - to_pts[None, :, :]) ** 2).sum(axis=-1)
        out[i:i + chunk] = np.sqrt(d2.min(axis=1))
    return out


def surface_distances(pair: MaskPair) -> tuple[np.ndarray, np.ndarray]:
    """(pred->ref, ref->pred) nearest boundary distances in mm."""
    sp = _boundary_points(pair.prediction, pair.spacing)
    sg = _boundary_points(pair.reference, pair.spacing)
    if len(sp) == 0 or len(sg) == 0:
        raise ValueError("surface distances undefined for an empty mask")
    return _nearest_distances(sp, sg), _nearest_distances(sg, sp)


def hd95(pair: MaskPair) -> float:
    if pair.prediction.sum() == 0 or pair.reference.sum() == 0:
        return math.nan
    d_pg, d_gp = surface_distances(pair)
    return float(np.percentile(np.concatenate([d_pg, d_gp]), 95))


def surface_dsc(pair: MaskPair, tolerance_mm: float) -> float:
    if pair.prediction.sum() == 0 and pair.reference.sum() == 0:
        return 1.0
    if pair.prediction.sum() == 0 or pair.reference.sum() == 0:
        return math.nan
    d_pg, d_gp = surface_distances(pair)
    within = (d_pg <= tolerance_mm).sum() + (d_gp <= tolerance_mm).sum()
    return float(within / (len(d_pg) + len(d_gp)))


# -- synthesis fidelity -----------------------------------------------------------

def intensity_kl(real_imgs, pseudo_imgs, bins: int = 256) -> float:
    """KL(hist(real) || hist(pseudo)) over intensities in [-1, 1], with 1e-8
    probability mass added per bin and renormalized."""
    def hist_prob(images):
        flat = np.concatenate([np.asarray(im, dtype=np.float64).ravel() for im in images]) \
            if isinstance(images, (list, tuple)) else np.asarray(images, dtype=np.float64).ravel()
        h, _ = np.histogram(np.clip(flat, -1.0, 1.0), bins=bins, range=(-1.0, 1.0))
        p = h / h.sum() + 1e-8
        return p / p.sum()

    p, q = hist_prob(real_imgs), hist_prob(pseudo_imgs)
    return float(np.sum(p * np.log(p / q)))


def psnr(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(data_range ** 2 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 2.0, k1: float = 0.01,
         k2: float = 0.03, window_size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
    evaluated on the valid (uncropped-window) region."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("images must share a shape")
    w = _gaussian_window(window_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = convolve2d(a, w, mode="valid")
    mu_b = convolve2d(b, w, mode="valid")
    var_a = convolve2d(a * a, w, mode="valid") - mu_a ** 2
    var_b = convolve2d(b * b, w, mode="valid") - mu_b ** 2
    cov = convolve2d(a * b, w, mode="valid") - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# -- robustness and significance ----------------------------------------------------

def coefficient_of_variation(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    mu = values.mean()
    if mu == 0:
        raise ValueError("coefficient of variation undefined for zero mean")
    return float(values.std(ddof=0) / mu)


@dataclass
class WilcoxonResult:
    statistic: float
    p_two_sided: float
    n_effective: int


def wilcoxon_signed_rank(paired_a, paired_b, exact_limit: int = 12) -> WilcoxonResult:
    """Two-sided paired signed-rank test.

    Zero differences are dropped; absolute differences are mid-ranked. The
    statistic is min(W+, W-). For n <= ``exact_limit`` the p-value counts
    sign patterns whose |W+ - n(n+1)/4| is at least the observed deviation;
    above that a normal approximation with tie correction and a 0.5
    continuity correction is used. No nonzero differences -> p = 1.
    """
    d = np.asarray(paired_a, dtype=np.float64) - np.asarray(paired_b, dtype=np.float64)
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_two_sided=1.0, n_effective=0)
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    mu = n * (n + 1) / 4.0
    if n <= exact_limit:
        signs = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.float64)
        w_all = signs @ ranks
        observed = abs(w_plus - mu)
        p = float(np.mean(np.abs(w_all - mu) >= observed - 1e-9))
    else:
        _, counts = np.unique(ranks, return_counts=True)
        sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - ((counts ** 3 - counts).sum()) / 48.0
        sigma = math.sqrt(sigma2)
        cc = 0.5 if w_plus != mu else 0.0
        z = (w_plus - mu - math.copysign(cc, w_plus - mu)) / sigma
        p = min(1.0, 2.0 * norm.sf(abs(z)))
    return WilcoxonResult(statistic=min(w_plus, w_minus), p_two_sided=p, n_effective=n)


def roc_curve(pixel_probs, pixel_labels) -> tuple[list[tuple[float, float]], float]:
    """Threshold sweep over the unique scores; returns ((fpr, tpr) points
    from (0, 0) to (1, 1), trapezoidal AUC)."""
    scores = np.asarray(pixel_probs, dtype=np.float64).ravel()
    labels = np.asarray(pixel_labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must align")
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    tp = np.cumsum(labels[order])
    fp = np.cumsum(~labels[order])
    # keep the last index of each tied-score run (threshold boundaries)
    last_of_run = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    tpr = np.r_[0.0, tp[last_of_run] / n_pos]
    fpr = np.r_[0.0, fp[last_of_run] / n_neg]
    auc = float(np.trapezoid(tpr, fpr))
    return list(zip(fpr.tolist(), tpr.tolist())), auc


# -- persistence ------------------------------------------------------------------

_CSV_FIELDS = ["case_id", "structure", "dsc", "sdsc", "hd95_mm",
               "sdsc_tolerance_mm", "kl", "psnr", "ssim"]


def write_metrics_csv(path, records: list[MetricRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for rec in records:
            row = {k: v for k, v in asdict(rec).items() if k in _CSV_FIELDS}
            if math.isinf(row.get("psnr", 0.0) or 0.0):
                row["psnr"] = PSNR_CAP_DB
            writer.writerow(row)


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            parsed = {"case_id": row["case_id"], "structure": row["structure"]}
            for key in _CSV_FIELDS[2:]:
                parsed[key] = float(row[key]) if row[key] not in ("", None) else math.nan
            rows.append(parsed)
        return rows


def aggregate_records(records: list[MetricRecord]) -> dict[str, dict[str, float]]:
    """Per-structure mean/std of each metric; NaNs excluded and counted."""
    out: dict[str, dict[str, float]] = {}
    structures = sorted({r.structure for r in records})
    for structure in structures:
        rows = [r for r in records if r.structure == structure]
        stats = {"n_cases": float(len(rows))}
        for key in ("dsc", "sdsc", "hd95_mm", "kl", "psnr", "ssim"):
            vals = np.array([getattr(r, key) for r in rows], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            stats[f"{key}_mean"] = float(vals.mean()) if vals.size else math.nan
            stats[f"{key}_std"] = float(vals.std(ddof=0)) if vals.size else math.nan
            stats[f"{key}_missing"] = float(len(rows) - vals.size)
        out[structure] = stats
    return out


def format_aggregate_table(aggregate: dict[str, dict[str, float]]) -> str:
    lines = [f"{'structure':<12} {'DSC':>14} {'sDSC':>14} {'HD95 mm':>14}"]
    for structure, stats in aggregate.items():
        def cell(key):
            m, s = stats[f"{key}_mean"], stats[f"{key}_std"]
            return "--" if math.isnan(m) else f"{m:.3f}+-{s:.3f}"
        lines.append(f"{structure:<12} {cell('dsc'):>14} {cell('sdsc'):>14} {cell('hd95_mm'):>14}")
    return "\n".join(lines)
