"""Label providers: map real images to hard or soft labels, and sample fake labels."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import numpy as np
import torch
from scipy.special import softmax

from fewlabel_gan.constants import (
    CENTROIDS_FILE,
    EXTRACTOR_WEIGHTS_FILE,
    PROVIDER_METADATA_FILE,
    UNLABELED,
)
from fewlabel_gan.core.clustering import ClusterModel, assign_clusters
from fewlabel_gan.core.data_pipeline import LabeledDataset, to_tensor, write_label_manifest
from fewlabel_gan.core.feature_extractor import FeatureExtractor, class_logits, extract_features
from fewlabel_gan.models.artifacts import ProviderMetadata
from fewlabel_gan.models.config import LabelMode
from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import (
    ConfigurationError,
    StateError,
    ValidationError,
    validate_probability_rows,
)

logger = setup_logger(__name__)

PRIOR_TOLERANCE = 1e-6

LogitsFn = Callable[[torch.Tensor], torch.Tensor]


class ProviderKind(str, Enum):
    GROUND_TRUTH = "GROUND_TRUTH"
    SINGLE = "SINGLE"
    RANDOM = "RANDOM"
    CLUSTER = "CLUSTER"
    S2L = "S2L"
    COTRAIN = "COTRAIN"


@dataclass
class LabelProvider:
    """
    Labels for real images plus the prior fake labels are drawn from.

    Attributes:
        kind: Which labeling rule applies.
        num_classes: Effective label count (K, n_clusters or 1).
        mode: HARD indices or SOFT distributions.
        prior: Fake-label distribution; empirical for clusters, uniform otherwise.
        seed: Seed of the RANDOM provider.
        extractor: Pretrained F for CLUSTER and S2L.
        clusters: Centroids for CLUSTER.
        logits_fn: Image tensor -> logits for COTRAIN (c_CT on D~(x)).
    """

    kind: ProviderKind
    num_classes: int
    mode: LabelMode = LabelMode.HARD
    prior: np.ndarray = field(default_factory=lambda: np.ones(1))
    seed: int = 0
    extractor: Optional[FeatureExtractor] = None
    clusters: Optional[ClusterModel] = None
    logits_fn: Optional[LogitsFn] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.prior = np.asarray(self.prior, dtype=np.float64)
        if self.prior.shape != (self.num_classes,):
            raise ValidationError(
                f"Prior has {self.prior.size} entries for {self.num_classes} labels"
            )
        if np.any(self.prior < 0) or abs(self.prior.sum() - 1.0) > PRIOR_TOLERANCE:
            raise ValidationError("Prior must be a distribution")

    @property
    def is_soft(self) -> bool:
        return self.mode == LabelMode.SOFT


def uniform_prior(num_classes: int) -> np.ndarray:
    return np.full(num_classes, 1.0 / num_classes)


def empirical_prior(labels: np.ndarray, num_classes: Optional[int] = None) -> np.ndarray:
    """
    Normalized histogram of integer labels.

    Raises:
        ValidationError: On an empty label list or negative labels.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValidationError("empirical_prior needs at least one label")
    if labels.min() < 0:
        raise ValidationError("Labels must be nonnegative")
    counts = np.bincount(labels, minlength=num_classes or 0)
    return counts / counts.sum()


# ---------------------------------------------------------------------------
# Constructors


def ground_truth_provider(num_classes: int) -> LabelProvider:
    return LabelProvider(ProviderKind.GROUND_TRUTH, num_classes, prior=uniform_prior(num_classes))


def single_label_provider() -> LabelProvider:
    return LabelProvider(ProviderKind.SINGLE, 1, prior=np.ones(1))


def random_provider(num_classes: int, seed: int) -> LabelProvider:
    return LabelProvider(
        ProviderKind.RANDOM, num_classes, prior=uniform_prior(num_classes), seed=seed
    )


def cluster_provider(
    extractor: FeatureExtractor,
    clusters: ClusterModel,
    training_images: Optional[np.ndarray] = None,
    device: str = "cpu",
    prior: Optional[np.ndarray] = None,
) -> LabelProvider:
    """c_CL(F(x)); the prior is the cluster histogram over the training images."""
    if prior is None:
        if training_images is None:
            raise ValidationError("Need training images or a prior for a cluster provider")
        assigned = assign_clusters(clusters, extract_features(extractor, training_images, device))
        prior = empirical_prior(assigned, clusters.n_clusters)
    return LabelProvider(
        ProviderKind.CLUSTER,
        clusters.n_clusters,
        prior=prior,
        extractor=extractor,
        clusters=clusters,
    )


def s2l_provider(extractor: FeatureExtractor, mode: LabelMode = LabelMode.HARD) -> LabelProvider:
    """c_S2L(F(x)) with fake labels drawn uniformly."""
    if extractor.class_head is None:
        raise StateError("An S2L provider needs an extractor with a class head")
    k = extractor.num_classes
    return LabelProvider(
        ProviderKind.S2L, k, mode=mode, prior=uniform_prior(k), extractor=extractor
    )


def cotrain_provider(
    logits_fn: LogitsFn, num_classes: int, mode: LabelMode = LabelMode.SOFT
) -> LabelProvider:
    return LabelProvider(
        ProviderKind.COTRAIN,
        num_classes,
        mode=mode,
        prior=uniform_prior(num_classes),
        logits_fn=logits_fn,
    )


# ---------------------------------------------------------------------------
# Labeling


def _from_logits(logits: np.ndarray, mode: LabelMode) -> np.ndarray:
    if mode == LabelMode.SOFT:
        probs = softmax(logits.astype(np.float64), axis=1)
        validate_probability_rows(probs)
        return probs.astype(np.float32)
    # np.argmax returns the first maximal index
    return np.argmax(logits, axis=1).astype(np.int64)


def _one_hot(indices: np.ndarray, num_classes: int) -> np.ndarray:
    return np.eye(num_classes, dtype=np.float32)[indices]


def provide_labels(
    provider: LabelProvider,
    images: np.ndarray,
    labels: Optional[np.ndarray] = None,
    step: int = 0,
    device: str = "cpu",
) -> np.ndarray:
    """
    Label a batch of real images.

    Args:
        provider: The labeling rule.
        images: [N, H, W, C] images in [-1, 1].
        labels: Dataset labels of the images (GROUND_TRUTH only).
        step: Training step; seeds RANDOM together with provider.seed.

    Returns:
        Int array [N] (HARD) or float array [N, K] (SOFT).

    Raises:
        StateError: If ground-truth labels are requested for unlabeled images,
            or a pretrained component is missing.
    """
    n = len(images)
    kind = provider.kind
    if kind == ProviderKind.GROUND_TRUTH:
        if labels is None or np.any(np.asarray(labels) == UNLABELED):
            raise StateError("Ground-truth labels requested for an unlabeled example")
        hard = np.asarray(labels, dtype=np.int64)
    elif kind == ProviderKind.SINGLE:
        hard = np.zeros(n, dtype=np.int64)
    elif kind == ProviderKind.RANDOM:
        rng = np.random.default_rng([provider.seed, step])
        hard = rng.integers(0, provider.num_classes, size=n)
    elif kind == ProviderKind.CLUSTER:
        if provider.extractor is None or provider.clusters is None:
            raise StateError("Cluster provider is missing its extractor or centroids")
        hard = assign_clusters(
            provider.clusters, extract_features(provider.extractor, images, device)
        )
    elif kind == ProviderKind.S2L:
        if provider.extractor is None:
            raise StateError("S2L provider is missing its extractor")
        return _from_logits(class_logits(provider.extractor, images, device), provider.mode)
    else:
        if provider.logits_fn is None:
            raise StateError("Co-training provider has no classifier attached")
        with torch.no_grad():
            logits = provider.logits_fn(to_tensor(images, device)).cpu().numpy()
        return _from_logits(logits, provider.mode)

    return _one_hot(hard, provider.num_classes) if provider.is_soft else hard


def sample_fake_labels(
    provider: LabelProvider, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw `count` fake labels from the provider's prior."""
    return rng.choice(provider.num_classes, size=count, p=provider.prior)


# ---------------------------------------------------------------------------
# Serialization


def _save_extractor(extractor: FeatureExtractor, path: Path) -> None:
    arrays = {k: v.detach().cpu().numpy() for k, v in extractor.state_dict().items()}
    np.savez(path, **arrays)


def _load_extractor(path: Path, num_classes: int, width: int) -> FeatureExtractor:
    extractor = FeatureExtractor(num_classes=num_classes, width=width)
    with np.load(path) as data:
        state = {k: torch.from_numpy(data[k]) for k in data.files}
    extractor.load_state_dict(state)
    extractor.eval()
    return extractor


def save_provider(
    provider: LabelProvider, directory: Union[str, Path], **metadata: Any
) -> ProviderMetadata:
    """
    Write provider.json plus extractor.npz / centroids.npz where applicable.

    Extra keyword arguments (dataset, k_percent, gamma, accuracies) go into the
    metadata sidecar.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = ProviderMetadata(
        kind=provider.kind.value,
        num_classes=provider.num_classes,
        mode=provider.mode.value,
        prior=[float(p) for p in provider.prior],
        seed=provider.seed,
        extractor_width=provider.extractor.width if provider.extractor else None,
        extractor_classes=provider.extractor.num_classes if provider.extractor else 0,
        **{**provider.metadata, **metadata},
    )
    if provider.extractor is not None:
        _save_extractor(provider.extractor, directory / EXTRACTOR_WEIGHTS_FILE)
    if provider.clusters is not None:
        np.savez(
            directory / CENTROIDS_FILE,
            centroids=provider.clusters.centroids,
            counts=provider.clusters.counts,
        )
    (directory / PROVIDER_METADATA_FILE).write_text(meta.model_dump_json(indent=2))
    logger.info(f"Saved {provider.kind.value} provider to {directory}")
    return meta


def provider_exists(directory: Union[str, Path]) -> bool:
    return (Path(directory) / PROVIDER_METADATA_FILE).is_file()


def load_provider(
    directory: Union[str, Path], mode: Optional[LabelMode] = None
) -> LabelProvider:
    """
    Load a provider written by save_provider.

    Args:
        mode: Override the stored HARD/SOFT mode (S2L only).

    Raises:
        ConfigurationError: If an artifact file is missing; the message names it.
    """
    directory = Path(directory)
    meta_path = directory / PROVIDER_METADATA_FILE
    if not meta_path.is_file():
        raise ConfigurationError(f"Missing pretrained artifact: {meta_path}")
    meta = ProviderMetadata.model_validate_json(meta_path.read_text())
    kind = ProviderKind(meta.kind)

    extractor = None
    if meta.extractor_width is not None:
        weights = directory / EXTRACTOR_WEIGHTS_FILE
        if not weights.is_file():
            raise ConfigurationError(f"Missing pretrained artifact: {weights}")
        extractor = _load_extractor(weights, meta.extractor_classes, meta.extractor_width)

    clusters = None
    if kind == ProviderKind.CLUSTER:
        centroid_path = directory / CENTROIDS_FILE
        if not centroid_path.is_file():
            raise ConfigurationError(f"Missing pretrained artifact: {centroid_path}")
        with np.load(centroid_path) as data:
            clusters = ClusterModel(centroids=data["centroids"], counts=data["counts"])

    provider = LabelProvider(
        kind=kind,
        num_classes=meta.num_classes,
        mode=mode or LabelMode(meta.mode),
        prior=np.asarray(meta.prior),
        seed=meta.seed,
        extractor=extractor,
        clusters=clusters,
        metadata=meta.model_dump(
            include={"dataset", "k_percent", "gamma", "heldout_accuracy", "rotation_accuracy"}
        ),
    )
    logger.info(f"Loaded {kind.value} provider from {directory}")
    return provider


def export_label_manifest(
    provider: LabelProvider,
    dataset: LabeledDataset,
    path: Union[str, Path],
    device: str = "cpu",
) -> np.ndarray:
    """
    Label every image with the provider's hard labels and write a manifest the
    loader can read.

    Returns:
        The exported labels.
    """
    labels = provide_labels(provider, dataset.images, dataset.labels, device=device)
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    paths = dataset.paths or [f"{i:06d}.png" for i in range(len(dataset))]
    write_label_manifest(path, paths, labels)
    return labels
