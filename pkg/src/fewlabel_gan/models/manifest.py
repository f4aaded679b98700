"""Experiment manifests: which data, which methods, which seeds, which reports."""

from enum import Enum
from pathlib import Path
from typing import List, Optional, Union

from pydantic import BaseModel, Field, ValidationError as PydanticValidationError, model_validator

from fewlabel_gan.constants import DESK_CHANNELS, DESK_IMAGE_SIZE
from fewlabel_gan.models.config import (
    Method,
    MethodConfig,
    PretrainConfig,
    load_method_configs,
)
from fewlabel_gan.utils.config import get_settings
from fewlabel_gan.utils.validators import ConfigurationError

EMBEDDER_DIR = "embedder"


class ReportTarget(str, Enum):
    MEDIAN = "median"
    MEAN_STD = "mean_std"
    SOFT_VS_HARD = "soft_vs_hard"
    BAR_CHART = "bar_chart"
    CURVES = "curves"


class SyntheticParams(BaseModel):
    """Parameters of the built-in colored-shapes dataset."""

    num_classes: int = Field(default=4, ge=1, le=10)
    per_class: int = Field(default=500, ge=1)
    image_size: int = Field(default=DESK_IMAGE_SIZE, ge=4)
    noise: float = Field(default=0.05, ge=0)
    seed: int = Field(default=0)


class DatasetSource(BaseModel):
    """
    Either an image folder with a label manifest or the synthetic generator.

    A relative `path` is resolved against FEWLABEL_DATA_DIR when it is set.
    """

    path: Optional[str] = Field(default=None, description="Image folder with labels.txt")
    synthetic: Optional[SyntheticParams] = Field(default=None)
    image_size: Optional[int] = Field(default=None, ge=4, description="Resize loaded images")
    eval_fraction: float = Field(
        default=0.1, gt=0, lt=1, description="Held-out share used as the real evaluation set"
    )
    split_seed: int = Field(default=0)

    @model_validator(mode="after")
    def _one_source(self) -> "DatasetSource":
        if (self.path is None) == (self.synthetic is None):
            raise ValueError("Give exactly one of 'path' or 'synthetic'")
        return self

    def resolved_path(self) -> Optional[Path]:
        if self.path is None:
            return None
        path = Path(self.path)
        data_root = get_settings().data_path
        if not path.is_absolute() and data_root is not None:
            path = data_root / path
        return path


class ExperimentManifest(BaseModel):
    """
    Everything the CLI stages need: data, pretraining, method configs, seeds and
    report targets.
    """

    name: str = Field(default="experiment", description="Label used in logs")
    dataset: DatasetSource = Field(..., description="Training data source")
    artifact_dir: Optional[str] = Field(
        default=None, description="Pretrained providers and the embedder (default: settings)"
    )
    out_dir: str = Field(default="runs", description="Checkpoints and metric logs")
    report_dir: Optional[str] = Field(default=None, description="Default: <out_dir>/report")
    seeds: List[int] = Field(default_factory=lambda: [1, 2, 3], min_length=1)
    methods: List[MethodConfig] = Field(default_factory=list)
    method_files: List[str] = Field(
        default_factory=list, description="Flat key = value config files, relative to the manifest"
    )
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    pretrain_seed: int = Field(default=0)
    channels: int = Field(default=DESK_CHANNELS, ge=8, description="GAN channel width")
    reports: List[ReportTarget] = Field(default_factory=lambda: list(ReportTarget))
    base_dir: Optional[str] = Field(default=None, exclude=True)

    class Config:
        json_schema_extra = {
            "example": {
                "name": "desk-s3gan",
                "dataset": {"synthetic": {"num_classes": 4, "per_class": 500}},
                "seeds": [1, 2, 3],
                "methods": [
                    {"method": "S3GAN", "k_percent": 10},
                    {"method": "SINGLE_LABEL", "self_supervised": True},
                ],
                "reports": ["median", "mean_std", "bar_chart"],
            }
        }

    # -- paths -----------------------------------------------------------

    def _relative(self, value: str) -> Path:
        path = Path(value)
        if not path.is_absolute() and self.base_dir is not None:
            path = Path(self.base_dir) / path
        return path

    @property
    def artifact_path(self) -> Path:
        if self.artifact_dir is None:
            return get_settings().artifact_path
        return self._relative(self.artifact_dir)

    @property
    def out_path(self) -> Path:
        return self._relative(self.out_dir)

    @property
    def report_path(self) -> Path:
        if self.report_dir is None:
            return self.out_path / "report"
        return self._relative(self.report_dir)

    @property
    def embedder_path(self) -> Path:
        return self.artifact_path / EMBEDDER_DIR

    def provider_path(self, config: MethodConfig) -> Optional[Path]:
        """Directory of the pretrained provider a method loads, or None."""
        if config.method == Method.CLUSTERING:
            return self.artifact_path / f"clustering-c{config.n_clusters}"
        if config.method.uses_pretrained_classifier:
            return self.artifact_path / f"s2l-k{config.k_percent:g}-l{config.label_seed}"
        return None

    # -- methods ---------------------------------------------------------

    def method_configs(self) -> List[MethodConfig]:
        """Inline methods followed by the expanded grids of every method file."""
        configs = list(self.methods)
        for name in self.method_files:
            configs.extend(load_method_configs(self._relative(name)))
        return configs

    def missing_artifacts(self, configs: Optional[List[MethodConfig]] = None) -> List[Path]:
        """Provider directories that methods need but that do not exist yet."""
        missing = []
        for config in configs if configs is not None else self.method_configs():
            path = self.provider_path(config)
            if path is not None and not path.is_dir() and path not in missing:
                missing.append(path)
        return missing


def load_manifest(path: Union[str, Path]) -> ExperimentManifest:
    """
    Read a JSON manifest; relative paths inside it resolve against its directory.

    Raises:
        ConfigurationError: If the file is missing or not a valid manifest.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Manifest not found: {path}")
    try:
        manifest = ExperimentManifest.model_validate_json(path.read_text())
    except PydanticValidationError as exc:
        raise ConfigurationError(f"Invalid manifest {path}: {exc}") from exc
    manifest.base_dir = str(path.parent)
    return manifest
