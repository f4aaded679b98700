"""Experiment configuration models and the flat key = value config format."""

import itertools
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, Field, ValidationError as PydanticValidationError, model_validator

from fewlabel_gan.constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPSILON,
    D_LEARNING_RATE,
    D_STEPS_PER_G,
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_BETA_COTRAIN,
    DEFAULT_GAMMA,
    DEFAULT_LAMBDA,
    DEFAULT_N_CLUSTERS,
    DESK_BATCH_SIZE,
    DESK_EVAL_EVERY,
    DESK_EVAL_SAMPLES,
    DESK_G_STEPS,
    DESK_LATENT_DIM,
    EVAL_SETS,
    G_LEARNING_RATE,
    PRETRAIN_DECAY_EPOCHS,
    PRETRAIN_DECAY_FACTOR,
    PRETRAIN_LR_PER_256,
    PRETRAIN_REFERENCE_EPOCHS,
    PRETRAIN_WARMUP_EPOCHS,
)
from fewlabel_gan.utils.validators import ConfigurationError


class Method(str, Enum):
    """GAN training methods."""

    BIGGAN = "BIGGAN"
    BIGGAN_K = "BIGGAN_K"
    SINGLE_LABEL = "SINGLE_LABEL"
    RANDOM_LABEL = "RANDOM_LABEL"
    CLUSTERING = "CLUSTERING"
    S2GAN = "S2GAN"
    S2GAN_CO = "S2GAN_CO"
    S3GAN = "S3GAN"
    S3GAN_CO = "S3GAN_CO"

    @property
    def is_cotrain(self) -> bool:
        return self in (Method.S2GAN_CO, Method.S3GAN_CO)

    @property
    def uses_pretrained_classifier(self) -> bool:
        return self in (Method.S2GAN, Method.S3GAN)

    @property
    def is_semi_supervised(self) -> bool:
        return self == Method.BIGGAN_K or self.is_cotrain or self.uses_pretrained_classifier

    @property
    def always_self_supervised(self) -> bool:
        return self in (Method.S3GAN, Method.S3GAN_CO)

    @property
    def allows_self_supervision_flag(self) -> bool:
        return self in (Method.SINGLE_LABEL, Method.RANDOM_LABEL, Method.CLUSTERING)

    @property
    def has_label_mode(self) -> bool:
        return self.is_cotrain or self.uses_pretrained_classifier


class LabelMode(str, Enum):
    """Conditioning on argmax indices (HARD) or softmax distributions (SOFT)."""

    HARD = "HARD"
    SOFT = "SOFT"


class LossWeights(BaseModel):
    """Loss term weights; None means "not used by this method"."""

    gamma: Optional[float] = Field(default=None, ge=0, description="Class term of the S2L loss")
    lambda_: Optional[float] = Field(
        default=None, ge=0, description="Co-training classifier cross-entropy"
    )
    alpha: Optional[float] = Field(default=None, ge=0, description="Generator rotation loss")
    beta: Optional[float] = Field(default=None, ge=0, description="Discriminator rotation loss")


class OptimizerParams(BaseModel):
    """Adam settings shared by G and D, plus batch geometry."""

    g_lr: float = Field(default=G_LEARNING_RATE, ge=0, description="Generator learning rate")
    d_lr: float = Field(default=D_LEARNING_RATE, ge=0, description="Discriminator learning rate")
    beta1: float = Field(default=ADAM_BETA1, ge=0, lt=1)
    beta2: float = Field(default=ADAM_BETA2, ge=0, lt=1)
    epsilon: float = Field(default=ADAM_EPSILON, gt=0)
    batch_size: int = Field(default=DESK_BATCH_SIZE, ge=2)
    latent_dim: int = Field(default=DESK_LATENT_DIM, gt=0)


class MethodConfig(BaseModel):
    """One training method with all of its hyperparameters."""

    method: Method = Field(..., description="Training method")
    self_supervised: bool = Field(
        default=False, description="Rotation self-supervision during GAN training"
    )
    k_percent: float = Field(default=100.0, gt=0, le=100, description="Percent of labels kept")
    n_clusters: Optional[int] = Field(default=None, ge=1, description="Clusters for CLUSTERING")
    label_mode: Optional[LabelMode] = Field(default=None, description="Hard or soft labels")
    weights: LossWeights = Field(default_factory=LossWeights)
    optimizer: OptimizerParams = Field(default_factory=OptimizerParams)
    total_g_steps: int = Field(default=DESK_G_STEPS, ge=0)
    d_steps_per_g: int = Field(default=D_STEPS_PER_G, ge=1)
    num_unlabeled: Optional[int] = Field(
        default=None, ge=0, description="Unlabeled examples per co-training batch"
    )
    eval_every: int = Field(default=DESK_EVAL_EVERY, ge=1)
    n_fake: int = Field(default=DESK_EVAL_SAMPLES, ge=2, description="Fake samples per eval set")
    n_sets: int = Field(default=EVAL_SETS, ge=1, description="Fake sets per evaluation")
    label_seed: int = Field(default=0, description="Seed of the label subsample")

    @model_validator(mode="after")
    def _resolve(self) -> "MethodConfig":
        m = self.method
        if m.always_self_supervised:
            self.self_supervised = True
        elif self.self_supervised and not m.allows_self_supervision_flag:
            raise ValueError(f"{m.value} has no self-supervised variant; use S3GAN / S3GAN_CO")

        if m.is_semi_supervised:
            if self.k_percent == 100 and m == Method.BIGGAN_K:
                raise ValueError("BIGGAN_K needs k_percent < 100")
        elif self.k_percent != 100:
            raise ValueError(f"{m.value} does not use k_percent")

        if m == Method.CLUSTERING:
            self.n_clusters = self.n_clusters or DEFAULT_N_CLUSTERS
        elif self.n_clusters is not None:
            raise ValueError("n_clusters is only used by CLUSTERING")

        if m.has_label_mode:
            default_mode = LabelMode.SOFT if m.is_cotrain else LabelMode.HARD
            self.label_mode = self.label_mode or default_mode
        elif self.label_mode is not None:
            raise ValueError(f"{m.value} does not use label_mode")

        w = self.weights
        if self.self_supervised:
            w.alpha = DEFAULT_ALPHA if w.alpha is None else w.alpha
            default_beta = DEFAULT_BETA_COTRAIN if m.is_cotrain else DEFAULT_BETA
            w.beta = default_beta if w.beta is None else w.beta
        elif w.alpha is not None or w.beta is not None:
            raise ValueError("alpha and beta require self_supervised")

        if m.is_cotrain:
            w.lambda_ = DEFAULT_LAMBDA if w.lambda_ is None else w.lambda_
            if self.num_unlabeled is None:
                self.num_unlabeled = self.optimizer.batch_size // 2
            if self.num_unlabeled > self.optimizer.batch_size:
                raise ValueError("num_unlabeled cannot exceed the batch size")
        elif w.lambda_ is not None or self.num_unlabeled is not None:
            raise ValueError("lambda_ and num_unlabeled are only used by co-training methods")

        if m.uses_pretrained_classifier:
            w.gamma = DEFAULT_GAMMA if w.gamma is None else w.gamma
        elif w.gamma is not None:
            raise ValueError("gamma is only used by S2GAN / S3GAN")
        return self

    @property
    def name(self) -> str:
        """Run name such as `S3GAN-k10` or `CLUSTERING_SS-c50`."""
        base = self.method.value
        if self.self_supervised and not self.method.always_self_supervised:
            base += "_SS"
        if self.method.is_semi_supervised:
            base += f"-k{self.k_percent:g}"
        if self.n_clusters is not None:
            base += f"-c{self.n_clusters}"
        if self.label_mode == LabelMode.SOFT and not self.method.is_cotrain:
            base += "-soft"
        return base


class PretrainConfig(BaseModel):
    """Feature-extractor pretraining (rotation loss plus optional class loss)."""

    epochs: int = Field(default=PRETRAIN_REFERENCE_EPOCHS, ge=1)
    batch_size: int = Field(default=DESK_BATCH_SIZE, ge=2)
    unlabeled_per_batch: Optional[int] = Field(
        default=None, ge=0, description="Unlabeled examples per batch (default 3/4 of the batch)"
    )
    gamma: float = Field(default=DEFAULT_GAMMA, ge=0)
    lr_per_256: float = Field(default=PRETRAIN_LR_PER_256, gt=0)
    warmup_fraction: float = Field(
        default=PRETRAIN_WARMUP_EPOCHS / PRETRAIN_REFERENCE_EPOCHS, ge=0, lt=1
    )
    decay_fractions: List[float] = Field(
        default_factory=lambda: [e / PRETRAIN_REFERENCE_EPOCHS for e in PRETRAIN_DECAY_EPOCHS]
    )
    decay_factor: float = Field(default=PRETRAIN_DECAY_FACTOR, gt=0, le=1)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    width: int = Field(default=32, ge=1, description="Channels of the first extractor block")
    heldout_fraction: float = Field(default=0.1, ge=0, lt=1)

    @property
    def base_learning_rate(self) -> float:
        return self.lr_per_256 * self.batch_size / 256

    @property
    def num_unlabeled(self) -> int:
        if self.unlabeled_per_batch is not None:
            return min(self.unlabeled_per_batch, self.batch_size)
        return (self.batch_size * 3) // 4


# ---------------------------------------------------------------------------
# Flat key = value files


def parse_flat_config(text: str) -> Dict[str, str]:
    """
    Parse `key = value` lines; `#` starts a comment, blank lines are skipped.

    Raises:
        ConfigurationError: On a line without `=` or a repeated key.
    """
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"Line {number}: expected 'key = value', got '{raw}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigurationError(f"Line {number}: duplicate key '{key}'")
        values[key] = value
    return values


def _nest(flat: Dict[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        target = nested
        *parents, leaf = key.split(".")
        for parent in parents:
            target = target.setdefault(parent, {})
        target[leaf] = value
    return nested


def expand_grid(flat: Dict[str, str]) -> List[Dict[str, str]]:
    """Cartesian product over comma-separated values (in key order)."""
    keys = list(flat)
    choices = [[v.strip() for v in flat[k].split(",")] for k in keys]
    return [dict(zip(keys, combo)) for combo in itertools.product(*choices)]


def method_configs_from_flat(flat: Dict[str, str]) -> List[MethodConfig]:
    """
    Build one MethodConfig per grid point of a flat mapping.

    Raises:
        ConfigurationError: If a grid point is not a valid MethodConfig.
    """
    configs = []
    for point in expand_grid(flat):
        try:
            configs.append(MethodConfig.model_validate(_nest(point)))
        except PydanticValidationError as exc:
            raise ConfigurationError(f"Invalid method config {point}: {exc}") from exc
    return configs


def load_method_configs(path: Union[str, Path]) -> List[MethodConfig]:
    """Read a flat config file and expand its grid lists."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    return method_configs_from_flat(parse_flat_config(path.read_text()))


def to_flat(config: BaseModel, prefix: str = "") -> Dict[str, str]:
    """Inverse of the nesting: a model as flat `a.b = value` pairs, None fields dropped."""
    flat: Dict[str, str] = {}
    for key, value in config.model_dump(mode="json").items():
        _flatten_into(flat, f"{prefix}{key}", value)
    return flat


def _flatten_into(flat: Dict[str, str], key: str, value: Any) -> None:
    if value is None:
        return
    if isinstance(value, dict):
        for sub_key, sub_value in value.items():
            _flatten_into(flat, f"{key}.{sub_key}", sub_value)
    elif isinstance(value, list):
        flat[key] = ",".join(str(v) for v in value)
    else:
        flat[key] = str(value)


def format_flat(config: BaseModel) -> str:
    return "\n".join(f"{k} = {v}" for k, v in to_flat(config).items())
