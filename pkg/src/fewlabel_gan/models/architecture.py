"""Architecture specifications for the generator and discriminator."""

from typing import Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from fewlabel_gan.constants import (
    BN_MOVING_AVERAGE_DECAY,
    DESK_CHANNELS,
    DESK_IMAGE_SIZE,
    DESK_LATENT_DIM,
    FULL_LATENT_DIM,
)

BASE_RESOLUTION = 4


class GeneratorSpec(BaseModel):
    """ResNet generator with conditional BatchNorm and latent chunking."""

    image_size: int = Field(..., gt=0, description="Output resolution (square)")
    ch: int = Field(..., gt=0, description="Channel width multiplier")
    latent_dim: int = Field(default=FULL_LATENT_DIM, gt=0, description="Size of z")
    num_classes: int = Field(..., ge=1, description="Number of (effective) classes K")
    embedding_dim: int = Field(default=128, gt=0, description="Class embedding size")
    channel_multipliers: Tuple[int, ...] = Field(
        ..., description="Width of the 4x4 input followed by each up-block's output, in units of ch"
    )
    nonlocal_at: Optional[int] = Field(
        default=None, description="Resolution after which the self-attention block runs"
    )
    spectral_norm: bool = Field(default=True, description="Spectral norm on ResBlock convolutions")
    sn_iterations: int = Field(default=1, ge=1, description="Power iterations per forward pass")
    bn_decay: float = Field(default=BN_MOVING_AVERAGE_DECAY, gt=0, lt=1)

    @property
    def num_blocks(self) -> int:
        return len(self.channel_multipliers) - 1

    @property
    def chunk_size(self) -> int:
        return self.latent_dim // (self.num_blocks + 1)

    @property
    def condition_dim(self) -> int:
        return self.embedding_dim + self.chunk_size

    @model_validator(mode="after")
    def _check_shapes(self) -> "GeneratorSpec":
        if self.num_blocks < 1:
            raise ValueError("Need at least one up-block")
        if self.latent_dim % (self.num_blocks + 1):
            raise ValueError(
                f"latent_dim={self.latent_dim} must split into {self.num_blocks + 1} equal chunks"
            )
        if BASE_RESOLUTION * 2**self.num_blocks != self.image_size:
            raise ValueError(
                f"{self.num_blocks} up-blocks from {BASE_RESOLUTION}x{BASE_RESOLUTION} "
                f"cannot produce {self.image_size}x{self.image_size}"
            )
        if self.nonlocal_at is not None and self.nonlocal_at not in self.block_resolutions():
            raise ValueError(f"No generator block outputs resolution {self.nonlocal_at}")
        return self

    def block_resolutions(self) -> Tuple[int, ...]:
        return tuple(BASE_RESOLUTION * 2 ** (i + 1) for i in range(self.num_blocks))

    @classmethod
    def full_scale(cls, num_classes: int = 1000, **overrides) -> "GeneratorSpec":
        """128x128 reference generator (ch=96, z=120 in 6 chunks)."""
        params = dict(
            image_size=128,
            ch=96,
            latent_dim=FULL_LATENT_DIM,
            num_classes=num_classes,
            channel_multipliers=(16, 16, 8, 4, 2, 1),
            nonlocal_at=64,
        )
        params.update(overrides)
        return cls(**params)

    @classmethod
    def desk_scale(cls, num_classes: int = 10, **overrides) -> "GeneratorSpec":
        """32x32 generator: 3 up-blocks, ch=16, attention at 16x16, z=16 in 4 chunks."""
        params = dict(
            image_size=DESK_IMAGE_SIZE,
            ch=DESK_CHANNELS,
            latent_dim=DESK_LATENT_DIM,
            num_classes=num_classes,
            channel_multipliers=(4, 4, 2, 1),
            nonlocal_at=16,
        )
        params.update(overrides)
        return cls(**params)


class DiscriminatorSpec(BaseModel):
    """Projection discriminator with optional rotation and co-training heads."""

    image_size: int = Field(..., gt=0)
    ch: int = Field(..., gt=0, description="Channel width multiplier")
    num_classes: int = Field(
        ..., ge=0, description="Classes of the projection layer; 0 removes the projection"
    )
    channel_multipliers: Tuple[int, ...] = Field(
        ..., description="Output width of each block in units of ch; the last block keeps size"
    )
    nonlocal_at: Optional[int] = Field(default=None)
    rotation_head: bool = Field(default=False, description="4-way rotation classifier on D~(x)")
    cotrain_head: bool = Field(default=False, description="K-way label classifier on D~(x)")
    spectral_norm: bool = Field(default=True)
    sn_iterations: int = Field(default=1, ge=1)

    @property
    def num_down_blocks(self) -> int:
        return len(self.channel_multipliers) - 1

    @property
    def representation_dim(self) -> int:
        return self.ch * self.channel_multipliers[-1]

    @model_validator(mode="after")
    def _check_shapes(self) -> "DiscriminatorSpec":
        if self.num_down_blocks < 1:
            raise ValueError("Need at least one down-block")
        if self.image_size % 2**self.num_down_blocks:
            raise ValueError(f"{self.image_size} is not divisible by 2^{self.num_down_blocks}")
        if self.cotrain_head and self.num_classes < 1:
            raise ValueError("The co-training head needs num_classes >= 1")
        if self.nonlocal_at is not None and self.nonlocal_at not in self.block_resolutions():
            raise ValueError(f"No discriminator block outputs resolution {self.nonlocal_at}")
        return self

    def block_resolutions(self) -> Tuple[int, ...]:
        down = tuple(self.image_size // 2 ** (i + 1) for i in range(self.num_down_blocks))
        return down + (down[-1],)

    @classmethod
    def full_scale(cls, num_classes: int = 1000, **overrides) -> "DiscriminatorSpec":
        """128x128 reference discriminator (ch=96, attention at 64x64)."""
        params = dict(
            image_size=128,
            ch=96,
            num_classes=num_classes,
            channel_multipliers=(1, 2, 4, 8, 16, 16),
            nonlocal_at=64,
        )
        params.update(overrides)
        return cls(**params)

    @classmethod
    def desk_scale(cls, num_classes: int = 10, **overrides) -> "DiscriminatorSpec":
        """32x32 discriminator: 3 down-blocks plus a same-size block, attention at 16x16."""
        params = dict(
            image_size=DESK_IMAGE_SIZE,
            ch=DESK_CHANNELS,
            num_classes=num_classes,
            channel_multipliers=(1, 2, 4, 4),
            nonlocal_at=16,
        )
        params.update(overrides)
        return cls(**params)
