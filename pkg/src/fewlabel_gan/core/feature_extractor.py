"""Self-supervised (rotation) and semi-supervised pretraining of the feature extractor F."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from fewlabel_gan.constants import NUM_ROTATIONS
from fewlabel_gan.core.data_pipeline import (
    LabeledDataset,
    make_mixed_batch,
    rotate_batch,
    to_tensor,
)
from fewlabel_gan.core.losses import rotation_loss, s2l_loss
from fewlabel_gan.models.config import PretrainConfig
from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import StateError

logger = setup_logger(__name__)

EVAL_CHUNK = 256


class FeatureExtractor(nn.Module):
    """
    Four conv blocks (width w, 2w, 4w, 8w) with global average pooling.

    `rotation_head` predicts the rotation of the input; `class_head` (present
    when num_classes > 0) is the linear classifier c_S2L on top of F.
    """

    def __init__(self, num_classes: int = 0, width: int = 32):
        super().__init__()
        self.num_classes = num_classes
        self.width = width
        layers: List[nn.Module] = []
        in_channels = 3
        for i in range(4):
            out_channels = width * 2**i
            layers += [
                nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False),
                nn.BatchNorm2d(out_channels),
                nn.ReLU(inplace=True),
                nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False),
                nn.BatchNorm2d(out_channels),
                nn.ReLU(inplace=True),
            ]
            if i < 3:
                layers.append(nn.AvgPool2d(2))
            in_channels = out_channels
        self.body = nn.Sequential(*layers)
        self.feature_dim = in_channels
        self.rotation_head = nn.Linear(self.feature_dim, NUM_ROTATIONS)
        self.class_head = nn.Linear(self.feature_dim, num_classes) if num_classes > 0 else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """F(x): [B, 3, H, W] -> [B, feature_dim]."""
        return self.body(x).mean(dim=(2, 3))

    def class_logits(self, features: torch.Tensor) -> torch.Tensor:
        if self.class_head is None:
            raise StateError("This extractor was trained without a class head")
        return self.class_head(features)


@dataclass
class PretrainResult:
    extractor: FeatureExtractor
    semi_supervised: bool
    history: List[Dict[str, float]] = field(default_factory=list)
    heldout_accuracy: Optional[float] = None
    rotation_accuracy: Optional[float] = None


def learning_rate_at(
    progress: float,
    base_lr: float,
    warmup_fraction: float,
    decay_fractions: Sequence[float],
    decay_factor: float,
) -> float:
    """
    Linear warmup to base_lr over `warmup_fraction` of training, then multiply by
    `decay_factor` at each decay fraction.

    Args:
        progress: Fraction of training completed, in [0, 1].
    """
    if warmup_fraction > 0 and progress < warmup_fraction:
        return base_lr * progress / warmup_fraction
    passed = sum(1 for boundary in decay_fractions if progress >= boundary)
    return base_lr * decay_factor**passed


@torch.no_grad()
def extract_features(
    extractor: FeatureExtractor, images: np.ndarray, device: str = "cpu"
) -> np.ndarray:
    """F(x) for [N, H, W, C] images in evaluation mode, in chunks."""
    was_training = extractor.training
    extractor.eval()
    outputs = []
    for start in range(0, len(images), EVAL_CHUNK):
        outputs.append(extractor(to_tensor(images[start : start + EVAL_CHUNK], device)).cpu())
    extractor.train(was_training)
    if not outputs:
        return np.zeros((0, extractor.feature_dim), dtype=np.float32)
    return torch.cat(outputs).numpy()


@torch.no_grad()
def class_logits(
    extractor: FeatureExtractor, images: np.ndarray, device: str = "cpu"
) -> np.ndarray:
    """c_S2L(F(x)) for [N, H, W, C] images."""
    features = torch.from_numpy(extract_features(extractor, images, device)).to(device)
    return extractor.class_logits(features).cpu().numpy()


@torch.no_grad()
def rotation_accuracy(
    extractor: FeatureExtractor, images: np.ndarray, device: str = "cpu"
) -> float:
    was_training = extractor.training
    extractor.eval()
    correct, total = 0, 0
    for start in range(0, len(images), EVAL_CHUNK):
        batch = rotate_batch(to_tensor(images[start : start + EVAL_CHUNK], device))
        predicted = extractor.rotation_head(extractor(batch.images)).argmax(dim=1)
        correct += int((predicted == batch.rotation_targets).sum())
        total += int(batch.rotation_targets.numel())
    extractor.train(was_training)
    return correct / max(total, 1)


def classification_accuracy(
    extractor: FeatureExtractor, dataset: LabeledDataset, device: str = "cpu"
) -> float:
    """Top-1 accuracy of c_S2L(F(x)) on the labeled examples of a dataset."""
    labeled = dataset.labeled_only()
    if len(labeled) == 0:
        raise StateError("Accuracy needs labeled examples")
    predicted = class_logits(extractor, labeled.images, device).argmax(axis=1)
    return float((predicted == labeled.labels).mean())


def train_feature_extractor(
    dataset: LabeledDataset,
    config: PretrainConfig,
    seed: int,
    semi_supervised: bool = True,
    eval_dataset: Optional[LabeledDataset] = None,
    device: str = "cpu",
) -> PretrainResult:
    """
    Train F with SGD on the rotation loss, plus gamma times the class loss on the
    labeled part of each batch when semi-supervised.

    With gamma == 0 the class term vanishes and training reduces to the
    rotation-only variant (no labels needed).

    Args:
        dataset: Training set; labels may be partially absent.
        config: Schedule, batch geometry and gamma.
        seed: Seed for initialization and batch order.
        semi_supervised: Train the class head c_S2L as well.
        eval_dataset: Fully labeled held-out set for the recorded accuracy.

    Raises:
        StateError: If semi-supervised training with gamma > 0 finds no labels.
    """
    use_labels = semi_supervised and config.gamma > 0
    if use_labels and dataset.labeled_indices.size == 0:
        raise StateError("Semi-supervised pretraining needs labeled examples")

    torch.manual_seed(seed)
    extractor = FeatureExtractor(
        num_classes=dataset.num_classes if semi_supervised else 0, width=config.width
    ).to(device)
    optimizer = torch.optim.SGD(
        extractor.parameters(),
        lr=0.0,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )

    batch_size = config.batch_size
    num_unlabeled = config.num_unlabeled if use_labels else batch_size
    steps_per_epoch = max(1, math.ceil(len(dataset) / batch_size))
    total_steps = config.epochs * steps_per_epoch
    logger.info(
        f"Pretraining F on '{dataset.name}' ({'semi-' if use_labels else 'self-'}supervised, "
        f"{config.epochs} epochs x {steps_per_epoch} steps, base lr {config.base_learning_rate:g})"
    )

    result = PretrainResult(extractor=extractor, semi_supervised=semi_supervised)
    extractor.train()
    for step in range(total_steps):
        lr = learning_rate_at(
            (step + 1) / total_steps,
            config.base_learning_rate,
            config.warmup_fraction,
            config.decay_fractions,
            config.decay_factor,
        )
        for group in optimizer.param_groups:
            group["lr"] = lr

        batch = make_mixed_batch(dataset, batch_size, num_unlabeled, seed, step, disjoint=True)
        rotated = rotate_batch(to_tensor(batch.all_images(), device))
        features = extractor(rotated.images)
        rotation_logits = extractor.rotation_head(features)

        if use_labels:
            # labeled images sit at the tail of each rotation block
            base = batch.size
            positions = torch.cat(
                [
                    torch.arange(r * base + num_unlabeled, (r + 1) * base)
                    for r in range(NUM_ROTATIONS)
                ]
            ).to(device)
            labels = torch.from_numpy(batch.labels).to(device).repeat(NUM_ROTATIONS)
            loss = s2l_loss(
                rotation_logits,
                rotated.rotation_targets,
                extractor.class_logits(features[positions]),
                labels,
                config.gamma,
            )
        else:
            loss = rotation_loss(rotation_logits, rotated.rotation_targets)

        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        if (step + 1) % steps_per_epoch == 0:
            epoch = (step + 1) // steps_per_epoch
            result.history.append({"epoch": epoch, "loss": float(loss), "lr": lr})
            logger.debug(f"epoch {epoch}: loss={float(loss):.4f} lr={lr:.5f}")

    extractor.eval()
    if eval_dataset is not None and len(eval_dataset):
        result.rotation_accuracy = rotation_accuracy(extractor, eval_dataset.images, device)
        if semi_supervised and eval_dataset.labeled_indices.size:
            result.heldout_accuracy = classification_accuracy(extractor, eval_dataset, device)
        logger.info(
            f"Pretraining done: rotation accuracy {result.rotation_accuracy:.3f}"
            + (
                f", held-out top-1 {result.heldout_accuracy:.3f}"
                if result.heldout_accuracy is not None
                else ""
            )
        )
    return result
