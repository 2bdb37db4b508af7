"""Exact t-SNE with binary-searched perplexity calibration.

The embedding loop is the classic exact formulation: conditional Gaussian
neighbourhoods calibrated per point to the target perplexity, symmetrized
joint probabilities, Student-t low-dimensional affinities, gradient descent
with early exaggeration (x12 for the first 250 iterations), momentum
0.5 -> 0.8, and per-coordinate adaptive gains. The (un-exaggerated) KL
objective is recorded at every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError

EARLY_EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
MOMENTUM_SWITCH_ITER = 250
P_FLOOR = 1e-12


def _squared_distances(x: np.ndarray) -> np.ndarray:
    sq = (x ** 2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def conditional_probabilities(x: np.ndarray, perplexity: float,
                              n_steps: int = 64, tol: float = 1e-6
                              ) -> tuple[np.ndarray, np.ndarray]:
    """Per-row Gaussian conditionals whose perplexity matches the target.

    Returns (P_conditional with zero diagonal, per-row precisions beta)."""
    d2 = _squared_distances(np.asarray(x, dtype=np.float64))
    n = d2.shape[0]
    target_entropy = np.log(perplexity)
    p_cond = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        row = np.delete(d2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(n_steps):
            w = np.exp(-row * beta)
            sum_w = max(w.sum(), P_FLOOR)
            entropy = np.log(sum_w) + beta * (row * w).sum() / sum_w
            err = entropy - target_entropy
            if abs(err) < tol:
                break
            if err > 0:        # entropy too high -> sharpen
                lo = beta
                beta = beta * 2.0 if not np.isfinite(hi) else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else (beta + lo) / 2.0
        p_row = w / max(w.sum(), P_FLOOR)
        p_cond[i, np.arange(n) != i] = p_row
        betas[i] = beta
    return p_cond, betas


def perplexity_of_conditionals(p_cond: np.ndarray) -> np.ndarray:
    """2^H (natural base e here) of each row, for calibration checks."""
    p = np.where(p_cond > 0, p_cond, 1.0)
    entropy = -(p_cond * np.log(p)).sum(axis=1)
    return np.exp(entropy)


@dataclass
class TsneResult:
    embedding: np.ndarray        # (n, 2)
    kl_history: list[float]      # per-iteration KL(P || Q), un-exaggerated
    betas: np.ndarray


def tsne_embed(samples: np.ndarray, perplexity: float = 60.0, iterations: int = 1000,
               seed: int = 0, learning_rate: float | None = None) -> TsneResult:
    x = np.asarray(samples, dtype=np.float64)
    n = x.shape[0]
    if n <= 3 * perplexity:
        raise ConfigurationError(
            f"t-SNE needs n > 3 * perplexity (n={n}, perplexity={perplexity}); "
            "use a smaller perplexity")
    p_cond, betas = conditional_probabilities(x, perplexity)
    p = (p_cond + p_cond.T) / (2.0 * n)
    p = np.maximum(p, P_FLOOR)
    if learning_rate is None:
        learning_rate = max(n / EARLY_EXAGGERATION / 4.0, 50.0)

    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_history = []
    for it in range(iterations):
        exaggeration = EARLY_EXAGGERATION if it < EXAGGERATION_ITERS else 1.0
        momentum = 0.5 if it < MOMENTUM_SWITCH_ITER else 0.8
        num = 1.0 / (1.0 + _squared_distances(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), P_FLOOR)
        kl_history.append(float((p * np.log(p / q)).sum()))
        pq = (exaggeration * p - q) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        velocity = momentum * velocity - learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    num = 1.0 / (1.0 + _squared_distances(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), P_FLOOR)
    kl_history.append(float((p * np.log(p / q)).sum()))
    return TsneResult(embedding=y, kl_history=kl_history, betas=betas)


def separability_score(embedding: np.ndarray, labels) -> float:
    """Silhouette coefficient of a 2-D embedding under a binary partition."""
    y = np.asarray(embedding, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) != 2:
        raise ValueError(f"expected a binary partition, got labels {uniq}")
    d = np.sqrt(_squared_distances(y))
    scores = np.zeros(len(y))
    for idx in range(len(y)):
        same = labels == labels[idx]
        same[idx] = False
        other = labels != labels[idx]
        if not same.any():
            scores[idx] = 0.0     # singleton cluster convention
            continue
        a = d[idx, same].mean()
        b = d[idx, other].mean()
        scores[idx] = (b - a) / max(a, b)
    return float(scores.mean())
