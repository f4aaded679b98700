"""FID and Inception Score with a pluggable embedder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Tuple

import numpy as np
import scipy.linalg
import torch
from scipy.special import rel_entr

from fewlabel_gan.constants import COVARIANCE_RIDGE
from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import ValidationError, validate_probability_rows

logger = setup_logger(__name__)

SYMMETRY_TOLERANCE = 1e-6
NEGATIVE_EIGENVALUE_TOLERANCE = 1e-6

# (count, seed) -> images [count, 3, H, W] in [-1, 1]
Sampler = Callable[[int, int], torch.Tensor]


class Embedder(Protocol):
    """Frozen image -> feature map plus the class posterior used for IS."""

    identifier: str
    dim: int

    def embed(self, images: torch.Tensor) -> Tuple[np.ndarray, np.ndarray]:
        """Return (features [N, d], class probabilities [N, K])."""
        ...


def matrix_sqrt_psd(a: np.ndarray) -> np.ndarray:
    """
    Symmetric PSD square root via an eigendecomposition.

    The input is symmetrized first; eigenvalues in [-1e-6, 0) are clamped to 0.

    Raises:
        ValidationError: If the matrix is not square, not symmetric or has an
            eigenvalue below -1e-6.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"Expected a square matrix, got shape {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOLERANCE * max(1.0, np.abs(a).max()):
        raise ValidationError("Matrix is not symmetric")
    a = (a + a.T) / 2
    eigenvalues, eigenvectors = scipy.linalg.eigh(a)
    if eigenvalues.size and eigenvalues.min() < -NEGATIVE_EIGENVALUE_TOLERANCE:
        raise ValidationError(f"Matrix is not PSD (eigenvalue {eigenvalues.min():.3e})")
    root = (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T
    return (root + root.T) / 2


@dataclass
class GaussianStats:
    """Mean, covariance and sample count of a feature set."""

    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        d = self.mu.shape[0]
        if self.sigma.shape != (d, d):
            raise ValidationError(f"Covariance must be {d}x{d}, got {self.sigma.shape}")
        if self.n < 2:
            raise ValidationError("Statistics need at least 2 samples")

    @property
    def dim(self) -> int:
        return int(self.mu.shape[0])

    @classmethod
    def from_features(cls, features: np.ndarray) -> "GaussianStats":
        accumulator = StatsAccumulator(np.asarray(features).shape[1])
        accumulator.update(features)
        return accumulator.finalize()

    def with_ridge(self, ridge: float) -> "GaussianStats":
        return GaussianStats(self.mu, self.sigma + ridge * np.eye(self.dim), self.n)


class StatsAccumulator:
    """
    Streaming mean / covariance in float64.

    Batches are combined with the pairwise update of Chan et al., so the result
    does not depend on how the features were split into batches.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.n = 0
        self.mean = np.zeros(dim, dtype=np.float64)
        self.m2 = np.zeros((dim, dim), dtype=np.float64)

    def update(self, features: np.ndarray) -> None:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValidationError(f"Expected features [N, {self.dim}], got {x.shape}")
        if x.shape[0] == 0:
            return
        n_b = x.shape[0]
        mean_b = x.mean(axis=0)
        centered = x - mean_b
        self.merge(n_b, mean_b, centered.T @ centered)

    def merge(self, n_b: int, mean_b: np.ndarray, m2_b: np.ndarray) -> None:
        n_a = self.n
        total = n_a + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / total)
        self.m2 = self.m2 + m2_b + np.outer(delta, delta) * (n_a * n_b / total)
        self.n = total

    def combine(self, other: "StatsAccumulator") -> None:
        if other.n:
            self.merge(other.n, other.mean, other.m2)

    def finalize(self) -> GaussianStats:
        if self.n < 2:
            raise ValidationError("Statistics need at least 2 samples")
        sigma = self.m2 / (self.n - 1)
        return GaussianStats(self.mean.copy(), (sigma + sigma.T) / 2, self.n)


def fid(stats_real: GaussianStats, stats_fake: GaussianStats) -> float:
    """
    ||mu_x - mu_g||^2 + Tr(S_x + S_g - 2 (S_x S_g)^1/2).

    The cross term uses Tr(sqrt(sqrt(S_x) S_g sqrt(S_x))), which has the same
    trace and only needs symmetric square roots. Results within -1e-6 of zero
    are clamped to 0.

    Raises:
        ValidationError: If the dimensions differ.
    """
    if stats_real.dim != stats_fake.dim:
        raise ValidationError(f"Dimension mismatch: {stats_real.dim} vs {stats_fake.dim}")
    diff = stats_real.mu - stats_fake.mu
    root_x = matrix_sqrt_psd(stats_real.sigma)
    cross = matrix_sqrt_psd(root_x @ stats_fake.sigma @ root_x)
    value = float(
        diff @ diff
        + np.trace(stats_real.sigma)
        + np.trace(stats_fake.sigma)
        - 2.0 * np.trace(cross)
    )
    return max(value, 0.0)


def inception_score(pred_probs: np.ndarray) -> float:
    """
    exp(mean_i KL(p(y|x_i) || p(y))) with p(y) the mean of the rows.

    Raises:
        ValidationError: On empty input, negative entries or rows not summing to 1.
    """
    probs = np.asarray(pred_probs, dtype=np.float64)
    validate_probability_rows(probs)
    marginal = probs.mean(axis=0, keepdims=True)
    kl = rel_entr(probs, marginal).sum(axis=1)
    score = float(np.exp(kl.mean()))
    return float(np.clip(score, 1.0, probs.shape[1]))


# ---------------------------------------------------------------------------
# Evaluation protocol


@dataclass
class EvaluationResult:
    fid_sets: List[float] = field(default_factory=list)
    is_sets: List[float] = field(default_factory=list)

    @property
    def n_sets(self) -> int:
        return len(self.fid_sets)

    @property
    def fid_mean(self) -> float:
        return float(np.mean(self.fid_sets))

    @property
    def is_mean(self) -> float:
        return float(np.mean(self.is_sets))


def embed_in_chunks(
    embedder: Embedder, images: torch.Tensor, chunk: int = 500
) -> Tuple[np.ndarray, np.ndarray]:
    features, probs = [], []
    for start in range(0, images.shape[0], chunk):
        f, p = embedder.embed(images[start : start + chunk])
        features.append(f)
        probs.append(p)
    return np.concatenate(features), np.concatenate(probs)


def compute_statistics(
    embedder: Embedder, sampler: Sampler, count: int, seed: int, chunk: int = 500
) -> Tuple[GaussianStats, np.ndarray]:
    """Embed `count` sampled images chunk by chunk; return their stats and class posteriors."""
    accumulator = StatsAccumulator(embedder.dim)
    probs = []
    for index, start in enumerate(range(0, count, chunk)):
        size = min(chunk, count - start)
        features, p = embedder.embed(sampler(size, seed * 1_000_003 + index))
        accumulator.update(features)
        probs.append(p)
    return accumulator.finalize(), np.concatenate(probs)


_REAL_STATS_CACHE: Dict[Tuple[str, str, int], GaussianStats] = {}


def real_statistics(
    embedder: Embedder, images: torch.Tensor, key: Optional[str] = None
) -> GaussianStats:
    """Statistics of the real evaluation set, cached per (embedder, key, size)."""
    cache_key = (embedder.identifier, key or "", int(images.shape[0]))
    if key is not None and cache_key in _REAL_STATS_CACHE:
        return _REAL_STATS_CACHE[cache_key]
    accumulator = StatsAccumulator(embedder.dim)
    for start in range(0, images.shape[0], 500):
        accumulator.update(embedder.embed(images[start : start + 500])[0])
    stats = accumulator.finalize()
    if key is not None:
        _REAL_STATS_CACHE[cache_key] = stats
    return stats


def evaluate_model(
    sampler: Sampler,
    real_stats: GaussianStats,
    embedder: Embedder,
    n_fake: int,
    n_sets: int,
    seed: int,
) -> EvaluationResult:
    """
    FID and IS averaged over `n_sets` independently sampled fake sets.

    Each set has `n_fake` images. When n_fake <= d the covariances are rank
    deficient, so a ridge of 1e-6 * I is added to both.
    """
    if n_sets < 1:
        raise ValidationError("n_sets must be >= 1")
    ridge = 0.0
    if n_fake <= embedder.dim or real_stats.n <= embedder.dim:
        logger.warning(
            f"n_fake={n_fake} <= d={embedder.dim}: covariance is rank-deficient, "
            f"adding ridge {COVARIANCE_RIDGE:g}"
        )
        ridge = COVARIANCE_RIDGE
    real = real_stats.with_ridge(ridge) if ridge else real_stats

    result = EvaluationResult()
    for set_index in range(n_sets):
        fake_stats, probs = compute_statistics(
            embedder, sampler, n_fake, seed=seed * 7919 + set_index
        )
        if ridge:
            fake_stats = fake_stats.with_ridge(ridge)
        result.fid_sets.append(fid(real, fake_stats))
        result.is_sets.append(inception_score(probs))
    logger.info(
        f"Evaluated {result.n_sets} fake sets of {n_fake}: "
        f"FID {result.fid_mean:.3f}, IS {result.is_mean:.3f} ({embedder.identifier})"
    )
    return result
