"""Evaluation embedders: a small frozen classifier and a fixed random projection."""

from __future__ import annotations

import hashlib
import math
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.special import softmax

from fewlabel_gan.constants import EMBEDDER_METADATA_FILE, EMBEDDER_WEIGHTS_FILE, EMBEDDING_DIM
from fewlabel_gan.core.data_pipeline import LabeledDataset, make_mixed_batch, to_tensor
from fewlabel_gan.models.artifacts import EmbedderMetadata
from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import ConfigurationError, StateError

logger = setup_logger(__name__)


class ClassifierNet(nn.Module):
    """Three conv stages, a d-dimensional penultimate layer and a K-way output."""

    def __init__(self, num_classes: int, embedding_dim: int = EMBEDDING_DIM, width: int = 32):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1),
            nn.ReLU(),
            nn.AvgPool2d(2),
            nn.Conv2d(width, 2 * width, 3, padding=1),
            nn.ReLU(),
            nn.AvgPool2d(2),
            nn.Conv2d(2 * width, 4 * width, 3, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.penultimate = nn.Linear(4 * width, embedding_dim)
        self.output = nn.Linear(embedding_dim, num_classes)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        features = F.relu(self.penultimate(self.body(x)))
        return features, self.output(features)


class ClassifierEmbedder:
    """
    Penultimate activations as the FID embedding, softmax as the IS classifier.

    The identifier hashes the weights, so equal identifiers mean equal outputs.
    """

    def __init__(self, net: ClassifierNet, metadata: EmbedderMetadata, device: str = "cpu"):
        self.net = net.to(device).eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.metadata = metadata
        self.identifier = metadata.identifier
        self.dim = metadata.embedding_dim
        self.device = device

    @torch.no_grad()
    def embed(self, images: torch.Tensor) -> Tuple[np.ndarray, np.ndarray]:
        features, logits = self.net(images.to(self.device, torch.float32))
        return features.cpu().double().numpy(), torch.softmax(logits.double(), 1).cpu().numpy()

    def save(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays = {k: v.cpu().numpy() for k, v in self.net.state_dict().items()}
        np.savez(directory / EMBEDDER_WEIGHTS_FILE, **arrays)
        (directory / EMBEDDER_METADATA_FILE).write_text(self.metadata.model_dump_json(indent=2))
        logger.info(f"Saved embedder {self.identifier} to {directory}")
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path], device: str = "cpu") -> "ClassifierEmbedder":
        """
        Raises:
            ConfigurationError: If the weights or metadata are missing.
        """
        directory = Path(directory)
        for name in (EMBEDDER_WEIGHTS_FILE, EMBEDDER_METADATA_FILE):
            if not (directory / name).is_file():
                raise ConfigurationError(f"Missing embedder artifact: {directory / name}")
        text = (directory / EMBEDDER_METADATA_FILE).read_text()
        meta = EmbedderMetadata.model_validate_json(text)
        net = ClassifierNet(meta.num_classes, meta.embedding_dim, meta.width)
        with np.load(directory / EMBEDDER_WEIGHTS_FILE) as data:
            net.load_state_dict({k: torch.from_numpy(data[k]) for k in data.files})
        return cls(net, meta, device)


def _weights_digest(net: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in net.state_dict().items():
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()[:12]


def train_embedder(
    dataset: LabeledDataset,
    seed: int = 0,
    epochs: int = 10,
    batch_size: int = 128,
    lr: float = 1e-3,
    width: int = 32,
    embedding_dim: int = EMBEDDING_DIM,
    device: str = "cpu",
) -> ClassifierEmbedder:
    """
    Train the evaluation classifier on a fully labeled dataset with Adam, then freeze it.

    Raises:
        StateError: If the dataset has unlabeled examples.
    """
    if not dataset.is_fully_labeled:
        raise StateError("The evaluation embedder is trained on a fully labeled dataset")
    torch.manual_seed(seed)
    net = ClassifierNet(dataset.num_classes, embedding_dim, width).to(device)
    optimizer = torch.optim.Adam(net.parameters(), lr=lr)
    steps = epochs * max(1, math.ceil(len(dataset) / batch_size))

    net.train()
    for step in range(steps):
        batch = make_mixed_batch(dataset, batch_size, 0, seed, step)
        _, logits = net(to_tensor(batch.labeled_images, device))
        loss = F.cross_entropy(logits, torch.from_numpy(batch.labels).to(device))
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

    net.eval()
    with torch.no_grad():
        correct = 0
        for start in range(0, len(dataset), 500):
            _, logits = net(to_tensor(dataset.images[start : start + 500], device))
            labels = torch.from_numpy(dataset.labels[start : start + 500]).to(device)
            correct += int((logits.argmax(1) == labels).sum())
    accuracy = correct / len(dataset)

    meta = EmbedderMetadata(
        identifier=f"classifier-{dataset.name}-d{embedding_dim}-{_weights_digest(net)}",
        num_classes=dataset.num_classes,
        embedding_dim=embedding_dim,
        width=width,
        dataset=dataset.name,
        seed=seed,
        train_accuracy=accuracy,
    )
    logger.info(f"Trained embedder {meta.identifier} (train accuracy {accuracy:.3f})")
    return ClassifierEmbedder(net, meta, device)


class RandomProjectionEmbedder:
    """
    Fixed Gaussian projection of flattened pixels; class posteriors are a
    softmax of a second fixed projection. Needs no training.
    """

    def __init__(
        self,
        image_size: int,
        dim: int = EMBEDDING_DIM,
        num_classes: int = 10,
        seed: int = 0,
        channels: int = 3,
    ):
        rng = np.random.default_rng(seed)
        in_features = channels * image_size * image_size
        self.projection = rng.normal(0.0, 1.0 / np.sqrt(in_features), (in_features, dim))
        self.classifier = rng.normal(0.0, 1.0, (dim, num_classes))
        self.dim = dim
        self.identifier = f"random-projection-{image_size}-d{dim}-k{num_classes}-s{seed}"

    def embed(self, images: torch.Tensor) -> Tuple[np.ndarray, np.ndarray]:
        flat = images.detach().cpu().double().reshape(images.shape[0], -1).numpy()
        features = flat @ self.projection
        return features, softmax(features @ self.classifier, axis=1)


def load_or_train_embedder(
    directory: Union[str, Path],
    dataset: Optional[LabeledDataset] = None,
    seed: int = 0,
    device: str = "cpu",
) -> ClassifierEmbedder:
    """Reuse the embedder stored in `directory`, training and saving one if absent."""
    directory = Path(directory)
    if (directory / EMBEDDER_METADATA_FILE).is_file():
        return ClassifierEmbedder.load(directory, device)
    if dataset is None:
        raise ConfigurationError(f"No embedder at {directory} and no dataset to train one")
    embedder = train_embedder(dataset, seed=seed, device=device)
    embedder.save(directory)
    return embedder

