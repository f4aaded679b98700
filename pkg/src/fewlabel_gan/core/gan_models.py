"""ResNet generator and projection discriminator, with reference tensor naming."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from fewlabel_gan.constants import BN_EPSILON, NUM_ROTATIONS
from fewlabel_gan.core.layers import (
    ConditionalBatchNorm2d,
    LabelInput,
    NonLocalBlock,
    SNConv2d,
    SNLinear,
    as_distribution,
    projection_term,
)
from fewlabel_gan.models.architecture import DiscriminatorSpec, GeneratorSpec
from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import ValidationError

logger = setup_logger(__name__)


def _init_weights(module: nn.Module) -> None:
    """Xavier-uniform kernels and zero biases, leaving cBN condition maps at zero."""
    for name, sub in module.named_modules():
        if ".condition." in f".{name}.":
            continue
        if isinstance(sub, (nn.Conv2d, nn.Linear)):
            nn.init.xavier_uniform_(sub.weight)
            if sub.bias is not None:
                nn.init.zeros_(sub.bias)


# ---------------------------------------------------------------------------
# Generator


class GeneratorBlock(nn.Module):
    """Up-sampling ResBlock: cBN-ReLU-up-conv3x3, cBN-ReLU-conv3x3, plus up-conv1x1 shortcut."""

    def __init__(self, in_channels: int, out_channels: int, spec: GeneratorSpec):
        super().__init__()
        sn = dict(spectral_norm=spec.spectral_norm, sn_iterations=spec.sn_iterations)
        self.bn1 = ConditionalBatchNorm2d(in_channels, spec.condition_dim, spec.bn_decay)
        self.up_conv1 = SNConv2d(in_channels, out_channels, 3, padding=1, **sn)
        self.bn2 = ConditionalBatchNorm2d(out_channels, spec.condition_dim, spec.bn_decay)
        self.same_conv2 = SNConv2d(out_channels, out_channels, 3, padding=1, **sn)
        self.up_conv_shortcut = SNConv2d(in_channels, out_channels, 1, **sn)

    def forward(self, x: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.bn1(x, condition))
        h = self.up_conv1(F.interpolate(h, scale_factor=2, mode="nearest"))
        h = F.relu(self.bn2(h, condition))
        h = self.same_conv2(h)
        shortcut = self.up_conv_shortcut(F.interpolate(x, scale_factor=2, mode="nearest"))
        return h + shortcut


class Generator(nn.Module):
    """
    Class-conditional ResNet generator.

    z is split into num_blocks + 1 chunks: the first feeds the dense layer, chunk
    i + 1 is concatenated with the class embedding to condition block i.
    Soft labels use the expected embedding sum_c y_c * embed(c).
    """

    scope = "generator"

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        widths = [spec.ch * m for m in spec.channel_multipliers]
        self.embed_y = nn.Linear(spec.num_classes, spec.embedding_dim, bias=False)
        self.fc_noise = nn.Linear(spec.chunk_size, 4 * 4 * widths[0])

        self._nonlocal_after: Optional[int] = None
        for i in range(spec.num_blocks):
            self.add_module(f"B{i + 1}", GeneratorBlock(widths[i], widths[i + 1], spec))
            if spec.nonlocal_at == spec.block_resolutions()[i] and self._nonlocal_after is None:
                self.non_local_block = NonLocalBlock(widths[i + 1], spectral_norm=False)
                self._nonlocal_after = i

        self.final_norm = nn.BatchNorm2d(widths[-1], eps=BN_EPSILON, momentum=1.0 - spec.bn_decay)
        self.final_conv = nn.Conv2d(widths[-1], 3, 3, padding=1)
        _init_weights(self)

    @property
    def blocks(self) -> List[GeneratorBlock]:
        return [getattr(self, f"B{i + 1}") for i in range(self.spec.num_blocks)]

    def forward(self, z: torch.Tensor, y: LabelInput) -> torch.Tensor:
        """
        Args:
            z: Latent codes [B, latent_dim].
            y: Class indices [B] or label distributions [B, K].

        Returns:
            Images [B, 3, H, W] in [-1, 1].
        """
        if z.shape[-1] != self.spec.latent_dim:
            raise ValidationError(f"Expected z of size {self.spec.latent_dim}, got {z.shape[-1]}")
        y_dist = as_distribution(y, self.spec.num_classes, z.dtype)
        chunks = torch.split(z, self.spec.chunk_size, dim=1)
        embedding = self.embed_y(y_dist)

        h = self.fc_noise(chunks[0]).view(z.shape[0], -1, 4, 4)
        for i, block in enumerate(self.blocks):
            h = block(h, torch.cat([embedding, chunks[i + 1]], dim=1))
            if i == self._nonlocal_after:
                h = self.non_local_block(h)
        h = F.relu(self.final_norm(h))
        return torch.tanh(self.final_conv(h))


def generator_forward(generator: Generator, z: torch.Tensor, y: LabelInput) -> torch.Tensor:
    """Functional entry point for a forward pass of the generator."""
    return generator(z, y)


# ---------------------------------------------------------------------------
# Discriminator


@dataclass
class DiscriminatorOutput:
    """
    Attributes:
        score: [B] pre-activation score; unconditional_logit + projection when labeled.
        unconditional_logit: [B] output of the real/fake head c_r/f.
        representation: [B, d] D~(x) after global sum pooling.
        rotation_logits: [B, 4] if requested.
        cotrain_logits: [B, K] if requested.
    """

    score: torch.Tensor
    unconditional_logit: torch.Tensor
    representation: torch.Tensor
    rotation_logits: Optional[torch.Tensor] = None
    cotrain_logits: Optional[torch.Tensor] = None


class DiscriminatorBlock(nn.Module):
    """
    Down-sampling ResBlock: ReLU-conv3x3, ReLU-conv3x3-avgpool, plus conv1x1-avgpool
    shortcut. Without downsampling the shortcut is the identity.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        downsample: bool,
        preactivation: bool,
        spec: DiscriminatorSpec,
    ):
        super().__init__()
        sn = dict(spectral_norm=spec.spectral_norm, sn_iterations=spec.sn_iterations)
        self.downsample = downsample
        self.preactivation = preactivation
        self.same_conv1 = SNConv2d(in_channels, out_channels, 3, padding=1, **sn)
        if downsample:
            self.down_conv2 = SNConv2d(out_channels, out_channels, 3, padding=1, **sn)
            self.down_conv_shortcut = SNConv2d(in_channels, out_channels, 1, **sn)
        else:
            if in_channels != out_channels:
                raise ValidationError("A block without downsampling must keep the channel count")
            self.same_conv2 = SNConv2d(out_channels, out_channels, 3, padding=1, **sn)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(x) if self.preactivation else x
        h = F.relu(self.same_conv1(h))
        if not self.downsample:
            return x + self.same_conv2(h)
        h = F.avg_pool2d(self.down_conv2(h), 2)
        return h + F.avg_pool2d(self.down_conv_shortcut(x), 2)


class Discriminator(nn.Module):
    """
    Projection discriminator D(x, y) = c_r/f(D~(x)) + D~(x)^T W^T y.

    With num_classes == 0 there is no projection layer and labels are ignored.
    Optional linear heads on D~(x): a 4-way rotation classifier and a K-way
    co-training classifier.
    """

    scope = "discriminator"

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        sn = dict(spectral_norm=spec.spectral_norm, sn_iterations=spec.sn_iterations)
        in_channels = 3
        self._nonlocal_after: Optional[int] = None
        resolutions = spec.block_resolutions()
        for i, mult in enumerate(spec.channel_multipliers):
            out_channels = spec.ch * mult
            block = DiscriminatorBlock(
                in_channels,
                out_channels,
                downsample=i < spec.num_down_blocks,
                preactivation=i > 0,
                spec=spec,
            )
            self.add_module(f"B{i + 1}", block)
            if spec.nonlocal_at == resolutions[i] and self._nonlocal_after is None:
                self.non_local_block = NonLocalBlock(out_channels, **sn)
                self._nonlocal_after = i
            in_channels = out_channels

        d = spec.representation_dim
        self.final_fc = SNLinear(d, 1, **sn)
        self.discriminator_projection: Optional[SNLinear] = None
        if spec.num_classes > 0:
            self.discriminator_projection = SNLinear(spec.num_classes, d, bias=False, **sn)
        self.rotation_head = SNLinear(d, NUM_ROTATIONS, **sn) if spec.rotation_head else None
        self.cotrain_head = SNLinear(d, spec.num_classes, **sn) if spec.cotrain_head else None
        _init_weights(self)

    @property
    def blocks(self) -> List[DiscriminatorBlock]:
        return [getattr(self, f"B{i + 1}") for i in range(len(self.spec.channel_multipliers))]

    @property
    def has_projection(self) -> bool:
        return self.discriminator_projection is not None

    def projection_weight(self) -> torch.Tensor:
        """Effective (spectrally normalized) projection matrix W of shape [K, d]."""
        if self.discriminator_projection is None:
            raise ValidationError("This discriminator has no projection layer")
        return self.discriminator_projection.normalized_weight().t()

    def represent(self, x: torch.Tensor) -> torch.Tensor:
        """D~(x): ResBlocks, ReLU, global sum pooling."""
        h = x
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i == self._nonlocal_after:
                h = self.non_local_block(h)
        return F.relu(h).sum(dim=(2, 3))

    def score(
        self, representation: torch.Tensor, y: Optional[LabelInput]
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Return (score, unconditional_logit) for a given representation and label."""
        logit = self.final_fc(representation).squeeze(-1)
        if y is None or not self.has_projection:
            return logit, logit
        return logit + projection_term(representation, self.projection_weight(), y), logit

    def forward(
        self,
        x: torch.Tensor,
        y: Optional[LabelInput] = None,
        rotation: bool = False,
        cotrain: bool = False,
    ) -> DiscriminatorOutput:
        representation = self.represent(x)
        score, logit = self.score(representation, y)
        output = DiscriminatorOutput(score, logit, representation)
        if rotation:
            if self.rotation_head is None:
                raise ValidationError("Rotation logits requested but the head is disabled")
            output.rotation_logits = self.rotation_head(representation)
        if cotrain:
            if self.cotrain_head is None:
                raise ValidationError("Co-training logits requested but the head is disabled")
            output.cotrain_logits = self.cotrain_head(representation)
        return output


def discriminator_forward(
    discriminator: Discriminator,
    x: torch.Tensor,
    y: Optional[LabelInput] = None,
    rotation: bool = False,
    cotrain: bool = False,
) -> DiscriminatorOutput:
    """Functional entry point for a forward pass of the discriminator."""
    return discriminator(x, y, rotation=rotation, cotrain=cotrain)


# ---------------------------------------------------------------------------
# Reference naming


@dataclass
class ParameterRow:
    name: str
    shape: Tuple[int, ...]
    size: int


_NORM_LEAVES = {"weight": "gamma", "bias": "beta"}
_BUFFER_LEAVES = {"running_mean": "moving_mean", "running_var": "moving_variance", "u": "u"}


def _is_kernel(module: nn.Module, leaf: str) -> bool:
    return leaf == "weight" and isinstance(module, (nn.Conv2d, nn.Linear))


def to_reference_layout(tensor: torch.Tensor, module: nn.Module, leaf: str) -> torch.Tensor:
    """Conv kernels to (kh, kw, in, out); dense kernels to (in, out)."""
    if not _is_kernel(module, leaf):
        return tensor
    return tensor.permute(2, 3, 1, 0) if tensor.ndim == 4 else tensor.t()


def from_reference_layout(array: torch.Tensor, module: nn.Module, leaf: str) -> torch.Tensor:
    if not _is_kernel(module, leaf):
        return array
    return array.permute(3, 2, 0, 1) if array.ndim == 4 else array.t()


def reference_name(scope: str, module_path: str, leaf: str, module: nn.Module) -> str:
    """Map a torch module path and tensor name to `scope/B1/up_conv1/kernel` style."""
    if isinstance(module, nn.BatchNorm2d) and leaf in _NORM_LEAVES:
        leaf = _NORM_LEAVES[leaf]
    elif leaf in _BUFFER_LEAVES:
        leaf = _BUFFER_LEAVES[leaf]
    elif _is_kernel(module, leaf):
        leaf = "kernel"
    parts = [p for p in module_path.split(".") if p] + [leaf]
    if parts[0].startswith(f"{scope}_"):
        return "/".join(parts)
    return "/".join([scope] + parts)


def named_reference_tensors(
    model: nn.Module, scope: str, include_buffers: bool = False
) -> Iterator[Tuple[str, torch.Tensor, nn.Module, str]]:
    """Yield (reference_name, tensor, owning_module, leaf) in registration order."""
    for path, module in model.named_modules():
        for leaf, param in module.named_parameters(recurse=False):
            yield reference_name(scope, path, leaf, module), param, module, leaf
        if include_buffers:
            for leaf, buf in module.named_buffers(recurse=False):
                if leaf == "num_batches_tracked":
                    continue
                yield reference_name(scope, path, leaf, module), buf, module, leaf


def count_parameters(model: nn.Module) -> int:
    """Number of trainable parameters."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def parameter_table(model: nn.Module, scope: Optional[str] = None) -> List[ParameterRow]:
    """Trainable tensors with reference names and (kh, kw, in, out) / (in, out) shapes."""
    scope = scope or getattr(model, "scope", model.__class__.__name__.lower())
    rows = []
    for name, tensor, module, leaf in named_reference_tensors(model, scope):
        shape = tuple(to_reference_layout(tensor.detach(), module, leaf).shape)
        rows.append(ParameterRow(name=name, shape=shape, size=int(np.prod(shape, dtype=np.int64))))
    return rows


def format_parameter_table(rows: List[ParameterRow]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{r.name:<{width}}  {str(r.shape):>22}  {r.size:>12,}" for r in rows]
    lines.append(f"{'total':<{width}}  {'':>22}  {sum(r.size for r in rows):>12,}")
    return "\n".join(lines)


def state_arrays(model: nn.Module, scope: Optional[str] = None) -> Dict[str, np.ndarray]:
    """Parameters and buffers as numpy arrays keyed by reference name."""
    scope = scope or getattr(model, "scope", model.__class__.__name__.lower())
    arrays = {}
    for name, tensor, module, leaf in named_reference_tensors(model, scope, include_buffers=True):
        array = to_reference_layout(tensor.detach(), module, leaf).cpu().numpy()
        arrays[name] = np.ascontiguousarray(array)
    return arrays


def load_state_arrays(
    model: nn.Module, arrays: Dict[str, np.ndarray], scope: Optional[str] = None
) -> None:
    """
    Copy arrays produced by `state_arrays` back into a model.

    Raises:
        ValidationError: If a tensor is missing or has the wrong shape.
    """
    scope = scope or getattr(model, "scope", model.__class__.__name__.lower())
    with torch.no_grad():
        for name, tensor, module, leaf in named_reference_tensors(
            model, scope, include_buffers=True
        ):
            if name not in arrays:
                raise ValidationError(f"Checkpoint is missing tensor '{name}'")
            value = from_reference_layout(torch.from_numpy(np.asarray(arrays[name])), module, leaf)
            if tuple(value.shape) != tuple(tensor.shape):
                raise ValidationError(
                    f"Shape mismatch for '{name}': {tuple(value.shape)} vs {tuple(tensor.shape)}"
                )
            tensor.copy_(value.to(tensor.dtype))


def build_generator(spec: GeneratorSpec) -> Generator:
    generator = Generator(spec)
    logger.info(f"Built generator ({count_parameters(generator):,} parameters)")
    return generator


def build_discriminator(spec: DiscriminatorSpec) -> Discriminator:
    discriminator = Discriminator(spec)
    logger.info(f"Built discriminator ({count_parameters(discriminator):,} parameters)")
    return discriminator
