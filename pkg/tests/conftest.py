"""Pytest configuration and fixtures."""

import numpy as np
import pytest
import torch

from fewlabel_gan.core.data_pipeline import LabeledDataset, SyntheticSpec, make_synthetic_dataset
from fewlabel_gan.models.architecture import DiscriminatorSpec, GeneratorSpec
from fewlabel_gan.models.config import MethodConfig, OptimizerParams
from fewlabel_gan.utils.config import get_settings

TINY_CHANNELS = 8


@pytest.fixture(autouse=True)
def _seed_torch():
    """Every test starts from the same global torch seed."""
    torch.manual_seed(0)


@pytest.fixture
def mock_env(monkeypatch, tmp_path):
    """Point settings at a temporary artifact directory."""
    monkeypatch.setenv("ARTIFACT_DIR", str(tmp_path / "artifacts"))
    monkeypatch.setenv("LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("LOG_FORMAT", "text")
    monkeypatch.setenv("DEVICE", "cpu")
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(scope="session")
def synthetic_dataset() -> LabeledDataset:
    """4 classes x 60 images at 32x32."""
    return make_synthetic_dataset(SyntheticSpec(num_classes=4, per_class=60), seed=0)


@pytest.fixture(scope="session")
def small_dataset() -> LabeledDataset:
    """4 classes x 13 images, for exact label-count checks."""
    return make_synthetic_dataset(SyntheticSpec(num_classes=4, per_class=13), seed=1)


@pytest.fixture
def tiny_generator_spec() -> GeneratorSpec:
    return GeneratorSpec.desk_scale(4, ch=TINY_CHANNELS)


@pytest.fixture
def tiny_discriminator_spec() -> DiscriminatorSpec:
    return DiscriminatorSpec.desk_scale(4, ch=TINY_CHANNELS)


@pytest.fixture
def tiny_optimizer() -> OptimizerParams:
    return OptimizerParams(batch_size=8, latent_dim=16)


@pytest.fixture
def tiny_config(tiny_optimizer):
    """Factory for short desk-scale method configs."""

    def make(method: str, **overrides) -> MethodConfig:
        values = dict(
            method=method,
            optimizer=tiny_optimizer,
            total_g_steps=2,
            eval_every=1,
            n_fake=16,
            n_sets=2,
        )
        values.update(overrides)
        return MethodConfig.model_validate(values)

    return make


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
