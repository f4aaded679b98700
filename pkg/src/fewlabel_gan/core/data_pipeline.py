"""Datasets, label subsampling, rotation and mixed labeled/unlabeled batches."""

from __future__ import annotations

import math
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Union

import numpy as np
import torch
from PIL import Image

from fewlabel_gan.constants import LABEL_MANIFEST_FILE, NUM_ROTATIONS, UNLABELED
from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import (
    StateError,
    ValidationError,
    validate_k_percent,
    validate_square,
)

logger = setup_logger(__name__)

ArrayOrTensor = Union[np.ndarray, torch.Tensor]


@dataclass
class LabeledDataset:
    """
    Images with optional per-example labels.

    Attributes:
        images: Float array [N, H, W, C] with pixel values in [-1, 1].
        labels: Int array [N]; UNLABELED (-1) marks an absent label.
        num_classes: Number of classes K.
        name: Dataset identifier, recorded in artifact metadata.
        paths: Optional relative file paths (images loaded from disk).
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"
    paths: Optional[List[str]] = None

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValidationError(f"Images must be [N, H, W, C], got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValidationError("Need exactly one label entry per image")
        present = self.labels[self.labels != UNLABELED]
        if present.size and (present.min() < 0 or present.max() >= self.num_classes):
            raise ValidationError(f"Labels must be in [0, {self.num_classes - 1}] or absent")
        if self.images.size and (self.images.min() < -1.0 or self.images.max() > 1.0):
            raise ValidationError("Pixel values must lie in [-1, 1]")

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_size(self) -> int:
        return int(self.images.shape[1])

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.labels != UNLABELED

    @property
    def labeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labeled_mask)

    @property
    def labeled_fraction(self) -> float:
        return float(self.labeled_mask.mean()) if len(self) else 0.0

    @property
    def is_fully_labeled(self) -> bool:
        return bool(self.labeled_mask.all())

    def with_labels(self, labels: np.ndarray) -> "LabeledDataset":
        """Return a copy sharing the images, with a new label vector."""
        return LabeledDataset(self.images, labels, self.num_classes, self.name, self.paths)

    def subset(self, indices: np.ndarray, name: Optional[str] = None) -> "LabeledDataset":
        """Return the examples at the given indices (order preserved)."""
        paths = [self.paths[i] for i in indices] if self.paths is not None else None
        return LabeledDataset(
            self.images[indices], self.labels[indices], self.num_classes, name or self.name, paths
        )

    def labeled_only(self) -> "LabeledDataset":
        """Drop every unlabeled example."""
        return self.subset(self.labeled_indices, name=f"{self.name}-labeled")

    def class_counts(self) -> np.ndarray:
        present = self.labels[self.labeled_mask]
        return np.bincount(present, minlength=self.num_classes)


def to_tensor(images: np.ndarray, device: Union[str, torch.device] = "cpu") -> torch.Tensor:
    """Convert [N, H, W, C] arrays to a float tensor [N, C, H, W]."""
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).to(device)


def to_images(tensor: torch.Tensor) -> np.ndarray:
    """Convert a [N, C, H, W] tensor back to a [N, H, W, C] array."""
    return tensor.detach().cpu().numpy().transpose(0, 2, 3, 1)


# ---------------------------------------------------------------------------
# Label subsampling


def subsample_labels(dataset: LabeledDataset, k_percent: float, seed: int) -> LabeledDataset:
    """
    Keep k% of the labels of every class, chosen by a seeded shuffle.

    For each class c (in increasing order) the class's indices are shuffled with a
    generator seeded by `seed` and the first floor(k/100 * count_c) are kept
    (minimum 1). All other labels become UNLABELED; images are untouched.

    Args:
        dataset: Fully labeled dataset.
        k_percent: Percentage in (0, 100].
        seed: Shuffle seed.

    Returns:
        Dataset with the same images and a partially masked label vector.

    Raises:
        ValidationError: On k outside (0, 100], a partially labeled input or an empty class.
    """
    fraction = validate_k_percent(k_percent) / 100
    if not dataset.is_fully_labeled:
        raise ValidationError("subsample_labels expects a fully labeled dataset")
    if fraction == 1:
        return dataset.with_labels(dataset.labels.copy())

    rng = np.random.default_rng(seed)
    labels = np.full_like(dataset.labels, UNLABELED)
    for c in range(dataset.num_classes):
        class_indices = np.flatnonzero(dataset.labels == c)
        if class_indices.size == 0:
            raise ValidationError(f"Class {c} has no examples")
        keep = math.floor(fraction * class_indices.size)
        if keep == 0:
            logger.warning(
                f"Class {c} would keep 0 of {class_indices.size} labels at k={k_percent}%; "
                "keeping 1"
            )
            keep = 1
        chosen = rng.permutation(class_indices)[:keep]
        labels[chosen] = c

    logger.info(
        f"Subsampled labels of '{dataset.name}' to {k_percent}%: "
        f"{int((labels != UNLABELED).sum())}/{len(dataset)} labeled"
    )
    return dataset.with_labels(labels)


# ---------------------------------------------------------------------------
# Rotation


@dataclass
class RotationBatch:
    """
    Four rotated copies of a batch.

    Images are laid out rotation-major: all 0 degree copies first, then 90, 180
    and 270, so rotation_targets[i] == i // B. Tensors use [4B, C, H, W].
    """

    images: torch.Tensor
    rotation_targets: torch.Tensor

    @property
    def base_size(self) -> int:
        return int(self.images.shape[0]) // NUM_ROTATIONS


def rotate(image: ArrayOrTensor, r: int) -> ArrayOrTensor:
    """
    Rotate a square [H, W, C] image by r * 90 degrees counter-clockwise.

    Raises:
        ValidationError: If the image is not square or r is not in {0, 1, 2, 3}.
    """
    if r not in range(NUM_ROTATIONS):
        raise ValidationError(f"Rotation index must be in 0..3, got {r}")
    validate_square(tuple(image.shape))
    if isinstance(image, torch.Tensor):
        return torch.rot90(image, r, dims=(0, 1))
    return np.rot90(image, r, axes=(0, 1)).copy()


def rotate_batch(images: torch.Tensor) -> RotationBatch:
    """
    Build the canonical rotation batch from [B, C, H, W] images.

    Returns:
        RotationBatch with 4B images and their rotation targets.
    """
    validate_square(tuple(images.shape), height_axis=2, width_axis=3)
    batch_size = images.shape[0]
    rotated = torch.cat([torch.rot90(images, r, dims=(2, 3)) for r in range(NUM_ROTATIONS)])
    targets = torch.arange(NUM_ROTATIONS, device=images.device).repeat_interleave(batch_size)
    return RotationBatch(images=rotated, rotation_targets=targets)


# ---------------------------------------------------------------------------
# Mixed batches


@dataclass
class MixedBatch:
    """A batch split into an unlabeled part and a labeled part."""

    unlabeled_indices: np.ndarray
    labeled_indices: np.ndarray
    unlabeled_images: np.ndarray
    labeled_images: np.ndarray
    labels: np.ndarray
    step: int = 0

    @property
    def size(self) -> int:
        return int(self.unlabeled_indices.size + self.labeled_indices.size)

    def all_images(self) -> np.ndarray:
        return np.concatenate([self.unlabeled_images, self.labeled_images])


def _draw(rng: np.random.Generator, pool: np.ndarray, count: int) -> np.ndarray:
    if count == 0:
        return np.empty(0, dtype=np.int64)
    return rng.choice(pool, size=count, replace=count > pool.size)


def make_mixed_batch(
    dataset: LabeledDataset,
    batch_size: int,
    num_unlabeled: int,
    seed: int,
    step: int,
    disjoint: bool = False,
) -> MixedBatch:
    """
    Draw `num_unlabeled` examples with labels masked plus `batch_size - num_unlabeled`
    labeled examples.

    The unlabeled part is drawn uniformly from all examples (or, with `disjoint`,
    from the examples without a label when there are any); the labeled part is drawn
    uniformly from the labeled examples. The draw depends only on (seed, step).

    Raises:
        ValidationError: If num_unlabeled is outside [0, batch_size].
        StateError: If a labeled part is requested but no labels exist.
    """
    if not 0 <= num_unlabeled <= batch_size:
        raise ValidationError(f"num_unlabeled must be in [0, {batch_size}], got {num_unlabeled}")
    num_labeled = batch_size - num_unlabeled
    labeled_pool = dataset.labeled_indices
    if num_labeled > 0 and labeled_pool.size == 0:
        raise StateError("Labeled examples requested but the dataset has none")

    rng = np.random.default_rng([seed, step])
    unlabeled_pool = np.arange(len(dataset))
    if disjoint:
        without_label = np.flatnonzero(~dataset.labeled_mask)
        if without_label.size:
            unlabeled_pool = without_label

    unlabeled_idx = _draw(rng, unlabeled_pool, num_unlabeled)
    labeled_idx = _draw(rng, labeled_pool, num_labeled)
    return MixedBatch(
        unlabeled_indices=unlabeled_idx,
        labeled_indices=labeled_idx,
        unlabeled_images=dataset.images[unlabeled_idx],
        labeled_images=dataset.images[labeled_idx],
        labels=dataset.labels[labeled_idx],
        step=step,
    )


class BatchPrefetcher:
    """
    Iterate over mixed batches for consecutive steps, assembling the next batch
    on a worker thread while the current one is consumed.

    The sequence is identical to calling make_mixed_batch for each step in order.
    """

    def __init__(
        self,
        dataset: LabeledDataset,
        batch_size: int,
        num_unlabeled: int,
        seed: int,
        start_step: int = 0,
        disjoint: bool = False,
    ):
        self.dataset = dataset
        self.batch_size = batch_size
        self.num_unlabeled = num_unlabeled
        self.seed = seed
        self.disjoint = disjoint
        self._step = start_step
        self._executor = ThreadPoolExecutor(max_workers=1)
        self._pending: Optional[Future] = None

    def _submit(self, step: int) -> Future:
        return self._executor.submit(
            make_mixed_batch,
            self.dataset,
            self.batch_size,
            self.num_unlabeled,
            self.seed,
            step,
            self.disjoint,
        )

    def __iter__(self) -> Iterator[MixedBatch]:
        return self

    def __next__(self) -> MixedBatch:
        if self._pending is None:
            self._pending = self._submit(self._step)
        batch = self._pending.result()
        self._step += 1
        self._pending = self._submit(self._step)
        return batch

    def close(self) -> None:
        self._executor.shutdown(wait=True, cancel_futures=True)

    def __enter__(self) -> "BatchPrefetcher":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------------------------------------------------------
# Loading


def _load_image(path: Path, image_size: Optional[int]) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert("RGB")
        if image_size is not None and img.size != (image_size, image_size):
            img = img.resize((image_size, image_size), Image.BILINEAR)
        pixels = np.asarray(img, dtype=np.float32)
    return pixels / 127.5 - 1.0


def load_image_folder(
    root: Union[str, Path],
    manifest_name: str = LABEL_MANIFEST_FILE,
    image_size: Optional[int] = None,
    num_classes: Optional[int] = None,
) -> LabeledDataset:
    """
    Load images listed in a label manifest.

    The manifest has one line per file: `<relative_path> <class_index>`; a class
    index of -1 marks an unlabeled file.

    Args:
        root: Dataset directory.
        manifest_name: Manifest file inside root.
        image_size: Resize to image_size x image_size when given.
        num_classes: K; defaults to max label + 1.

    Raises:
        FileNotFoundError: If root or the manifest does not exist.
        ValidationError: On malformed manifest lines.
    """
    root = Path(root)
    manifest = root / manifest_name
    if not manifest.is_file():
        raise FileNotFoundError(f"Label manifest not found: {manifest}")

    paths: List[str] = []
    labels: List[int] = []
    for line_no, line in enumerate(manifest.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.rsplit(maxsplit=1)
        if len(parts) != 2:
            raise ValidationError(f"{manifest}:{line_no}: expected '<path> <class_index>'")
        try:
            labels.append(int(parts[1]))
        except ValueError as e:
            raise ValidationError(f"{manifest}:{line_no}: bad class index '{parts[1]}'") from e
        paths.append(parts[0])

    logger.info(f"Loading {len(paths)} images from {root}")
    images = np.stack([_load_image(root / p, image_size) for p in paths])
    k = num_classes if num_classes is not None else max(labels) + 1
    return LabeledDataset(images, np.array(labels), k, name=root.name, paths=paths)


def write_label_manifest(path: Union[str, Path], paths: List[str], labels: np.ndarray) -> None:
    """Write `<relative_path> <class_index>` lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{p} {int(y)}" for p, y in zip(paths, labels)]
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote label manifest with {len(lines)} entries to {path}")


# ---------------------------------------------------------------------------
# Synthetic data

_PALETTE = np.array(
    [
        [0.9, 0.15, 0.1],
        [0.1, 0.8, 0.2],
        [0.15, 0.3, 0.95],
        [0.95, 0.85, 0.1],
        [0.8, 0.2, 0.8],
        [0.1, 0.85, 0.85],
        [0.95, 0.55, 0.1],
        [0.55, 0.35, 0.2],
        [0.6, 0.6, 0.6],
        [0.2, 0.2, 0.2],
    ],
    dtype=np.float32,
)

_SHAPES = ("square", "disc", "triangle", "bar")


def _shape_mask(shape: str, size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    dy, dx = yy - cy, xx - cx
    if shape == "square":
        return (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
    if shape == "disc":
        return dy**2 + dx**2 <= radius**2
    if shape == "triangle":
        # apex up: width grows towards the bottom
        return (dy >= -radius) & (dy <= radius) & (np.abs(dx) <= (dy + radius) / 2)
    return (np.abs(dy) <= radius / 3) & (np.abs(dx) <= radius * 1.4)


@dataclass
class SyntheticSpec:
    """Parameters of the built-in synthetic image generator."""

    num_classes: int = 4
    per_class: int = 500
    image_size: int = 32
    noise: float = 0.05
    name: str = "synthetic"


def make_synthetic_dataset(spec: SyntheticSpec, seed: int) -> LabeledDataset:
    """
    Generate a fully labeled dataset of colored shapes over an oriented background.

    Every image has a dark ground strip at the bottom and a vertical sky gradient,
    so rotations are identifiable; class c draws shape c % 4 in palette color c.
    """
    if spec.num_classes > len(_PALETTE):
        raise ValidationError(f"Synthetic data supports at most {len(_PALETTE)} classes")
    rng = np.random.default_rng(seed)
    size = spec.image_size
    ground = max(2, size // 6)
    gradient = np.linspace(0.75, 0.35, size, dtype=np.float32)[:, None, None]

    images = np.empty((spec.num_classes * spec.per_class, size, size, 3), dtype=np.float32)
    labels = np.repeat(np.arange(spec.num_classes), spec.per_class)
    for i, c in enumerate(labels):
        img = np.broadcast_to(gradient * np.array([0.6, 0.75, 1.0]), (size, size, 3)).copy()
        img[size - ground :] = np.array([0.25, 0.2, 0.1])
        radius = rng.uniform(size * 0.12, size * 0.22)
        cy = rng.uniform(radius + 1, size - ground - radius - 1)
        cx = rng.uniform(radius + 1, size - radius - 1)
        mask = _shape_mask(_SHAPES[c % len(_SHAPES)], size, cy, cx, radius)
        img[mask] = _PALETTE[c] * rng.uniform(0.85, 1.0)
        img += rng.normal(0.0, spec.noise, img.shape).astype(np.float32)
        images[i] = np.clip(img * 2.0 - 1.0, -1.0, 1.0)

    order = rng.permutation(len(labels))
    paths = [f"{spec.name}/{i:06d}.png" for i in range(len(labels))]
    return LabeledDataset(images[order], labels[order], spec.num_classes, spec.name, paths)


def save_image_folder(dataset: LabeledDataset, root: Union[str, Path]) -> Path:
    """Write a dataset as PNG files plus a label manifest, readable by load_image_folder."""
    root = Path(root)
    paths = dataset.paths or [f"{i:06d}.png" for i in range(len(dataset))]
    for rel, img in zip(paths, dataset.images):
        target = root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        pixels = np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
        Image.fromarray(pixels).save(target)
    write_label_manifest(root / LABEL_MANIFEST_FILE, paths, dataset.labels)
    return root
