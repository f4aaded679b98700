"""Building blocks: spectral normalization, conditional BatchNorm, self-attention, projection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from fewlabel_gan.constants import BN_EPSILON, BN_MOVING_AVERAGE_DECAY, SPECTRAL_NORM_EPSILON
from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import StateError, ValidationError, validate_soft_labels

logger = setup_logger(__name__)

LabelInput = Union[int, torch.Tensor]


# ---------------------------------------------------------------------------
# Spectral normalization


@dataclass
class SpectralNormState:
    """
    Power-iteration state for one normalized weight.

    Attributes:
        u: Unit vector of size out_features; updated in place.
        num_iterations: Power iterations per call.
    """

    u: torch.Tensor
    num_iterations: int = 1
    warned_zero: bool = False

    def __post_init__(self) -> None:
        if self.num_iterations < 1:
            raise ValidationError(
                f"Spectral norm needs at least one power iteration, got {self.num_iterations}"
            )

    @classmethod
    def for_weight(
        cls,
        weight: torch.Tensor,
        num_iterations: int = 1,
        generator: Optional[torch.Generator] = None,
    ) -> "SpectralNormState":
        u = torch.randn(weight.shape[0], generator=generator, dtype=weight.dtype)
        u = F.normalize(u, dim=0, eps=SPECTRAL_NORM_EPSILON)
        return cls(u=u, num_iterations=num_iterations)


def spectral_normalize(
    weight: torch.Tensor, state: SpectralNormState, update: bool = True
) -> torch.Tensor:
    """
    Divide a weight by the power-iteration estimate of its top singular value.

    Convolution kernels are viewed as (out_channels, in * kh * kw). The singular
    vectors are treated as constants for autograd; sigma = u^T W v carries the
    gradient.

    Args:
        weight: Weight tensor (first axis = outputs).
        state: Power-iteration state; `state.u` is overwritten when `update` is set.
        update: Persist the refined u (training) or leave it untouched (evaluation).

    Returns:
        weight / sigma, or the weight unchanged if it is all zeros.
    """
    if state.num_iterations < 1:
        raise ValidationError(f"num_iterations must be >= 1, got {state.num_iterations}")
    w_mat = weight.reshape(weight.shape[0], -1)
    with torch.no_grad():
        if not torch.any(w_mat != 0):
            if not state.warned_zero:
                logger.warning("Spectral norm of an all-zero weight is undefined; skipping")
                state.warned_zero = True
            return weight
        u = state.u.to(w_mat.dtype)
        for _ in range(state.num_iterations):
            v = F.normalize(w_mat.t() @ u, dim=0, eps=SPECTRAL_NORM_EPSILON)
            u = F.normalize(w_mat @ v, dim=0, eps=SPECTRAL_NORM_EPSILON)
        if update:
            state.u.copy_(u)
    sigma = torch.dot(u, w_mat @ v)
    return weight / sigma


class _SpectralNormMixin:
    """Keeps the power-iteration vector as a buffer named `u`."""

    weight: nn.Parameter

    def _init_spectral_norm(self, enabled: bool, num_iterations: int) -> None:
        self.sn_enabled = enabled
        self.sn_iterations = num_iterations
        if enabled:
            u = F.normalize(torch.randn(self.weight.shape[0]), dim=0, eps=SPECTRAL_NORM_EPSILON)
            self.register_buffer("u", u)  # type: ignore[attr-defined]

    @property
    def sn_state(self) -> SpectralNormState:
        state = getattr(self, "_sn_state", None)
        if state is None or state.u is not self.u:  # type: ignore[attr-defined]
            state = SpectralNormState(self.u, self.sn_iterations)  # type: ignore[attr-defined]
            self._sn_state = state
        return state

    def normalized_weight(self) -> torch.Tensor:
        if not self.sn_enabled:
            return self.weight
        return spectral_normalize(self.weight, self.sn_state, update=self.training)  # type: ignore


class SNConv2d(nn.Conv2d, _SpectralNormMixin):
    """Conv2d whose kernel is spectrally normalized at every forward pass."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        padding: int = 0,
        bias: bool = True,
        spectral_norm: bool = True,
        sn_iterations: int = 1,
    ):
        nn.Conv2d.__init__(self, in_channels, out_channels, kernel_size, padding=padding, bias=bias)
        self._init_spectral_norm(spectral_norm, sn_iterations)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._conv_forward(x, self.normalized_weight(), self.bias)


class SNLinear(nn.Linear, _SpectralNormMixin):
    """Linear layer whose weight is spectrally normalized at every forward pass."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        bias: bool = True,
        spectral_norm: bool = True,
        sn_iterations: int = 1,
    ):
        nn.Linear.__init__(self, in_features, out_features, bias=bias)
        self._init_spectral_norm(spectral_norm, sn_iterations)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.normalized_weight(), self.bias)


# ---------------------------------------------------------------------------
# Labels


def as_distribution(
    y: LabelInput, num_classes: int, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """
    Turn hard labels (int or integer tensor) into one-hot rows; validate soft rows.

    Raises:
        ValidationError: If a hard label is out of range or a soft row is not a distribution.
    """
    if isinstance(y, int):
        y = torch.tensor(y)
    if y.is_floating_point():
        if y.shape[-1] != num_classes:
            raise ValidationError(f"Soft labels need {num_classes} entries, got {y.shape[-1]}")
        validate_soft_labels(y)
        return y.to(dtype)
    if torch.any((y < 0) | (y >= num_classes)):
        raise ValidationError(f"Hard labels must be in [0, {num_classes - 1}]")
    return F.one_hot(y.long(), num_classes).to(dtype)


def projection_term(
    representation: torch.Tensor, weight: torch.Tensor, y: LabelInput
) -> torch.Tensor:
    """
    Class-conditional projection repr^T W^T y.

    Args:
        representation: [d] or [B, d].
        weight: [K, d]; row c is the embedding of class c.
        y: Hard index/indices or soft [K] / [B, K] distributions.

    Returns:
        Scalar (unbatched) or [B] projection scores.
    """
    num_classes = weight.shape[0]
    if not isinstance(y, torch.Tensor) or not y.is_floating_point():
        index = torch.as_tensor(y, device=weight.device)
        if torch.any((index < 0) | (index >= num_classes)):
            raise ValidationError(f"Hard labels must be in [0, {num_classes - 1}]")
        embedded = weight[index.long()]
    else:
        embedded = as_distribution(y, num_classes, weight.dtype) @ weight
    return (embedded * representation).sum(dim=-1)


# ---------------------------------------------------------------------------
# Normalization


class ConditionalBatchNorm2d(nn.Module):
    """
    BatchNorm whose scale and shift are linear maps of a condition vector.

    gamma = 1 + condition @ G, beta = condition @ B; no other affine parameters.
    Moving statistics decay by `decay` per training step.
    """

    def __init__(
        self,
        num_features: int,
        condition_dim: int,
        decay: float = BN_MOVING_AVERAGE_DECAY,
        eps: float = BN_EPSILON,
    ):
        super().__init__()
        self.num_features = num_features
        self.bn = nn.BatchNorm2d(num_features, eps=eps, momentum=1.0 - decay, affine=False)
        self.condition = nn.ModuleDict(
            {
                "gamma": nn.Linear(condition_dim, num_features, bias=False),
                "beta": nn.Linear(condition_dim, num_features, bias=False),
            }
        )
        nn.init.zeros_(self.condition["gamma"].weight)
        nn.init.zeros_(self.condition["beta"].weight)

    def forward(self, h: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        if self.training and h.shape[0] < 2:
            raise StateError(
                "Batch statistics are undefined for a batch of size 1 in training mode"
            )
        out = self.bn(h)
        gamma = 1.0 + self.condition["gamma"](condition)
        beta = self.condition["beta"](condition)
        return out * gamma[:, :, None, None] + beta[:, :, None, None]


def conditional_batchnorm(
    h: torch.Tensor, condition: torch.Tensor, layer: ConditionalBatchNorm2d
) -> torch.Tensor:
    """Functional entry point: apply a conditional BatchNorm layer."""
    return layer(h, condition)


# ---------------------------------------------------------------------------
# Self-attention


class NonLocalBlock(nn.Module):
    """
    Self-attention over spatial positions.

    theta and phi project to C/8 channels, g to C/2; phi and g are max-pooled by 2.
    The attended features are mapped back to C channels and added with a learned
    scale `sigma` (initialized to 0).
    """

    def __init__(self, channels: int, spectral_norm: bool = True, sn_iterations: int = 1):
        super().__init__()
        sn = dict(spectral_norm=spectral_norm, sn_iterations=sn_iterations, bias=False)
        self.conv2d_theta = SNConv2d(channels, channels // 8, 1, **sn)
        self.conv2d_phi = SNConv2d(channels, channels // 8, 1, **sn)
        self.conv2d_g = SNConv2d(channels, channels // 2, 1, **sn)
        self.conv2d_attn_g = SNConv2d(channels // 2, channels, 1, **sn)
        self.sigma = nn.Parameter(torch.zeros(()))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        theta = self.conv2d_theta(x).flatten(2)  # [B, C/8, HW]
        phi = F.max_pool2d(self.conv2d_phi(x), 2).flatten(2)  # [B, C/8, HW/4]
        g = F.max_pool2d(self.conv2d_g(x), 2).flatten(2)  # [B, C/2, HW/4]
        attn = torch.softmax(theta.transpose(1, 2) @ phi, dim=-1)  # [B, HW, HW/4]
        attended = (g @ attn.transpose(1, 2)).view(b, c // 2, h, w)
        return x + self.sigma * self.conv2d_attn_g(attended)
