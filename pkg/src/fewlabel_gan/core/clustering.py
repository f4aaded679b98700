"""Mini-batch k-means (per-centroid learning rate 1/count) and nearest-centroid assignment."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import ValidationError

logger = setup_logger(__name__)

DEFAULT_EPOCHS = 10


@dataclass
class ClusterModel:
    """
    Attributes:
        centroids: [n_clusters, d] float64.
        counts: Points absorbed by each centroid during fitting.
    """

    centroids: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.centroids.ndim != 2 or self.counts.shape != (self.centroids.shape[0],):
            raise ValidationError("centroids must be [n, d] with one count per centroid")
        if not np.all(np.isfinite(self.centroids)) or np.any(self.counts < 0):
            raise ValidationError("centroids must be finite and counts nonnegative")

    @property
    def n_clusters(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def assign_clusters(model: ClusterModel, features: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """
    Nearest centroid (squared Euclidean) for each row; ties go to the lowest index.

    Args:
        features: [N, d] array.

    Returns:
        Int array [N].
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.dim:
        raise ValidationError(f"Expected features of shape [N, {model.dim}], got {features.shape}")
    out = np.empty(features.shape[0], dtype=np.int64)
    for start in range(0, features.shape[0], chunk):
        block = features[start : start + chunk]
        out[start : start + chunk] = np.argmin(_squared_distances(block, model.centroids), axis=1)
    return out


def assign_cluster(model: ClusterModel, feature: np.ndarray) -> int:
    """Index of the centroid nearest to a single feature vector."""
    return int(assign_clusters(model, np.asarray(feature)[None, :])[0])


def fit_clusters(
    features: np.ndarray,
    n_clusters: int,
    batch_size: int = 256,
    iterations: Optional[int] = None,
    seed: int = 0,
) -> ClusterModel:
    """
    Fit mini-batch k-means.

    Centroids start at `n_clusters` distinct points sampled uniformly without
    replacement. Each iteration draws a mini-batch, assigns it to the current
    centroids, then moves each centroid towards each of its points with step
    1 / count, count being the points the centroid has absorbed so far.

    Args:
        features: [N, d] array.
        iterations: Mini-batch updates; defaults to 10 passes over the data.

    Raises:
        ValidationError: If N < n_clusters.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n_clusters < 1 or n < n_clusters:
        raise ValidationError(f"Need at least n_clusters={n_clusters} points, got {n}")
    batch_size = min(batch_size, n)
    if iterations is None:
        iterations = DEFAULT_EPOCHS * int(np.ceil(n / batch_size))

    rng = np.random.default_rng(seed)
    centroids = features[rng.choice(n, size=n_clusters, replace=False)].copy()
    counts = np.zeros(n_clusters, dtype=np.int64)
    for _ in range(iterations):
        batch = features[rng.choice(n, size=batch_size, replace=False)]
        nearest = np.argmin(_squared_distances(batch, centroids), axis=1)
        for point, c in zip(batch, nearest):
            counts[c] += 1
            eta = 1.0 / counts[c]
            centroids[c] = (1.0 - eta) * centroids[c] + eta * point

    model = ClusterModel(centroids=centroids, counts=counts)
    logger.info(
        f"Fitted {n_clusters} clusters on {n} points ({iterations} mini-batches), "
        f"{int((counts == 0).sum())} centroids never updated"
    )
    return model


def quantization_error(model: ClusterModel, features: np.ndarray) -> float:
    """Mean squared distance of each point to its nearest centroid."""
    features = np.asarray(features, dtype=np.float64)
    assigned = assign_clusters(model, features)
    return float(((features - model.centroids[assigned]) ** 2).sum(axis=1).mean())
