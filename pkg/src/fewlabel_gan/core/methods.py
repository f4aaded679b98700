"""Registry of training methods: label source, discriminator heads and loss terms."""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from fewlabel_gan.models.config import Method


@dataclass(frozen=True)
class MethodSpec:
    """
    Attributes:
        provider: Label provider kind for real images (see label_inference.ProviderKind).
        projection: Discriminator keeps its projection layer.
        needs_artifact: Pretrained provider loaded from disk (CLUSTER / S2L).
        prune_unlabeled: Train only on the labeled subset.
        cotrain: c_CT head on D~ and the co-training discriminator loss.
    """

    method: Method
    description: str
    provider: str
    projection: bool = True
    needs_artifact: bool = False
    prune_unlabeled: bool = False
    cotrain: bool = False


REGISTRY: Dict[Method, MethodSpec] = {
    Method.BIGGAN: MethodSpec(
        Method.BIGGAN, "Conditional GAN on all ground-truth labels", provider="GROUND_TRUTH"
    ),
    Method.BIGGAN_K: MethodSpec(
        Method.BIGGAN_K,
        "Conditional GAN on the k% labeled subset only",
        provider="GROUND_TRUTH",
        prune_unlabeled=True,
    ),
    Method.SINGLE_LABEL: MethodSpec(
        Method.SINGLE_LABEL,
        "All examples share one label; no projection layer",
        provider="SINGLE",
        projection=False,
    ),
    Method.RANDOM_LABEL: MethodSpec(
        Method.RANDOM_LABEL, "Uniformly random labels for real images", provider="RANDOM"
    ),
    Method.CLUSTERING: MethodSpec(
        Method.CLUSTERING,
        "Labels from k-means on self-supervised features",
        provider="CLUSTER",
        needs_artifact=True,
    ),
    Method.S2GAN: MethodSpec(
        Method.S2GAN,
        "Labels from a semi-supervised classifier on self-supervised features",
        provider="S2L",
        needs_artifact=True,
    ),
    Method.S2GAN_CO: MethodSpec(
        Method.S2GAN_CO,
        "Labels from a classifier co-trained on the discriminator representation",
        provider="COTRAIN",
        cotrain=True,
    ),
    Method.S3GAN: MethodSpec(
        Method.S3GAN,
        "S2GAN with rotation self-supervision during GAN training",
        provider="S2L",
        needs_artifact=True,
    ),
    Method.S3GAN_CO: MethodSpec(
        Method.S3GAN_CO,
        "S2GAN_CO with rotation self-supervision during GAN training",
        provider="COTRAIN",
        cotrain=True,
    ),
}

# Median (FID, IS) of the 128x128 reference runs, keyed by run name.
# Documentation only: desk-scale scores use a different embedder.
REFERENCE_MEDIANS: Dict[str, Tuple[float, float]] = {
    "BIGGAN": (8.4, 75.0),
    "RANDOM_LABEL": (26.5, 20.2),
    "SINGLE_LABEL": (25.3, 20.4),
    "SINGLE_LABEL_SS": (23.7, 22.2),
    "CLUSTERING-c50": (23.2, 22.7),
    "CLUSTERING_SS-c50": (22.0, 23.5),
    "S2GAN-k5": (10.8, 57.6),
    "S2GAN-k10": (8.9, 73.4),
    "S2GAN-k20": (8.4, 77.4),
    "S2GAN-k5-soft": (15.4, 40.3),
    "S2GAN-k10-soft": (12.9, 49.8),
    "S2GAN-k20-soft": (10.4, 62.1),
    "S2GAN_CO-k5": (21.8, 30.0),
    "S2GAN_CO-k10": (17.7, 37.2),
    "S2GAN_CO-k20": (13.9, 49.2),
    "S3GAN-k5": (10.4, 59.6),
    "S3GAN-k10": (8.0, 78.7),
    "S3GAN-k20": (7.7, 83.1),
    "S3GAN_CO-k5": (20.2, 31.0),
    "S3GAN_CO-k10": (16.6, 38.5),
    "S3GAN_CO-k20": (12.7, 53.1),
}


def get_method_spec(method: Method) -> MethodSpec:
    return REGISTRY[Method(method)]


def reference_median(run_name: str) -> Optional[Tuple[float, float]]:
    return REFERENCE_MEDIANS.get(run_name)


def method_table() -> Tuple[Tuple[str, str, str], ...]:
    """(name, label source, description) rows for display."""
    return tuple((m.value, s.provider, s.description) for m, s in REGISTRY.items())
