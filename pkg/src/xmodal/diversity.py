"""Diversity regularizer over prediction sets.

Collapsed samplers are penalized through a Gaussian kernel on the mean
pointwise squared distance between trajectory pairs: identical trajectories
give kernel value 1, far-apart ones approach 0. Only the most similar pair
is charged (a hard max), so spreading out any single clump reduces the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, apply_primitive
from .cvae import PredictionSet
from .encoder import MODALITY_SCALES

__all__ = [
    "DiversityConfig",
    "SimilarityMatrix",
    "pairwise_similarity",
    "k_max",
    "total_loss",
    "kmax_graph",
]


@dataclass
class DiversityConfig:
    lam: float = 10.0        # weight on the summed per-target penalties
    sigma_g_sq: float = 1.0  # Gaussian kernel bandwidth (squared)

    def validate(self):
        if self.lam < 0 or self.sigma_g_sq <= 0:
            raise ShapeError("need lam >= 0 and sigma_g_sq > 0")
        return self


@dataclass
class SimilarityMatrix:
    """Symmetric kernel matrix over the N trajectories of one target."""

    values: np.ndarray     # (N, N), ones on the diagonal
    distances: np.ndarray  # (N, N) mean pointwise squared distances


def _trajectory_rows(preds):
    if isinstance(preds, PredictionSet):
        scale = MODALITY_SCALES[preds.modality]["kernel"]
        return preds.trajectories * scale
    return np.asarray(preds, dtype=np.float64)


def pairwise_similarity(preds, config: DiversityConfig = DiversityConfig()) -> SimilarityMatrix:
    """Kernel matrix K = exp(-D / (2 sigma_G^2)) over an (N, delta, 2)
    trajectory stack; D is the mean squared pointwise distance. Frontal
    pixel distances are pre-scaled into a metric-comparable range."""
    config.validate()
    t = _trajectory_rows(preds)
    if t.ndim != 3 or t.shape[0] < 2:
        raise ShapeError(f"need at least 2 trajectories of shape (delta, 2), got {t.shape}")
    diff = t[:, None] - t[None, :]              # (N, N, delta, 2)
    dist = (diff**2).sum(axis=-1).mean(axis=-1)  # (N, N)
    return SimilarityMatrix(values=np.exp(-dist / (2.0 * config.sigma_g_sq)), distances=dist)


def k_max(sim: SimilarityMatrix) -> float:
    """Largest off-diagonal kernel entry (the most redundant pair)."""
    n = sim.values.shape[0]
    off = sim.values[~np.eye(n, dtype=bool)]
    return float(off.max())


def total_loss(elbo, k_maxes, config: DiversityConfig = DiversityConfig()):
    """Combined objective: joint negative ELBO plus lam times the summed
    per-target K_max penalties."""
    config.validate()
    return elbo + config.lam * float(np.sum(k_maxes))


def _pair_indices(n):
    """Upper-triangle pairs in row-major order, so the hard max breaks ties
    toward the lowest pair index."""
    i, j = np.triu_indices(n, k=1)
    return i, j


def kmax_graph(tape, yhat: Tensor, b, n, modality, config: DiversityConfig) -> Tensor:
    """Differentiable K_max per scenario for batched decoded futures.

    ``yhat`` holds B*N flattened trajectories (rows grouped by scenario,
    2*delta columns). Returns a (B,) tensor; the hard max routes the
    gradient to the single most similar pair of each scenario.
    """
    config.validate()
    if n < 2:
        raise ShapeError("K_max needs at least 2 samples per scenario")
    rows = yhat * MODALITY_SCALES[modality]["kernel"]
    delta = rows.shape[1] // 2
    pi0, pj0 = _pair_indices(n)
    pi = np.concatenate([pi0 + s * n for s in range(b)])
    pj = np.concatenate([pj0 + s * n for s in range(b)])
    diff = rows.take(pi) - rows.take(pj)
    dist = apply_primitive(tape, "square", [diff]).sum(axis=1) * (1.0 / delta)
    kernel = apply_primitive(tape, "exp", [dist * (-1.0 / (2.0 * config.sigma_g_sq))])
    return kernel.reshape(b, len(pi0)).max(axis=1)
