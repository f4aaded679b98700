"""Metadata written next to pretrained artifacts."""

from datetime import datetime, timezone
from typing import List, Optional

from pydantic import BaseModel, Field


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class ProviderMetadata(BaseModel):
    """Sidecar of a serialized label provider."""

    kind: str = Field(..., description="Provider kind (CLUSTER, S2L, ...)")
    num_classes: int = Field(..., ge=1, description="Number of effective labels")
    mode: str = Field(default="HARD", description="HARD or SOFT")
    prior: List[float] = Field(..., description="Distribution used to sample fake labels")
    seed: int = Field(default=0)
    dataset: Optional[str] = Field(default=None, description="Name of the training dataset")
    k_percent: Optional[float] = Field(default=None, description="Labels used for pretraining")
    gamma: Optional[float] = Field(default=None)
    extractor_width: Optional[int] = Field(default=None)
    extractor_classes: int = Field(default=0, ge=0, description="Outputs of the class head")
    heldout_accuracy: Optional[float] = Field(
        default=None, ge=0, le=1, description="Top-1 accuracy of c_S2L(F(x)) on held-out data"
    )
    rotation_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    created_at: str = Field(default_factory=_now)

    class Config:
        json_schema_extra = {
            "example": {
                "kind": "S2L",
                "num_classes": 4,
                "mode": "HARD",
                "prior": [0.25, 0.25, 0.25, 0.25],
                "seed": 0,
                "dataset": "synthetic",
                "k_percent": 10.0,
                "gamma": 0.5,
                "extractor_width": 32,
                "extractor_classes": 4,
                "heldout_accuracy": 0.97,
                "rotation_accuracy": 0.99,
            }
        }


class EmbedderMetadata(BaseModel):
    """Sidecar of a trained evaluation embedder."""

    identifier: str = Field(..., description="Identifier recorded in every metric record")
    num_classes: int = Field(..., ge=1)
    embedding_dim: int = Field(..., ge=1)
    width: int = Field(..., ge=1)
    dataset: str = Field(...)
    seed: int = Field(default=0)
    train_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    created_at: str = Field(default_factory=_now)
