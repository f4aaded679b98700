"""Tests for the method registry and method configs."""

import pytest
from pydantic import ValidationError as PydanticValidationError

from fewlabel_gan.core.methods import REGISTRY, get_method_spec, method_table, reference_median
from fewlabel_gan.models.config import (
    LabelMode,
    Method,
    MethodConfig,
    format_flat,
    load_method_configs,
    method_configs_from_flat,
    parse_flat_config,
)
from fewlabel_gan.utils.validators import ConfigurationError


def test_registry_covers_every_method():
    assert set(REGISTRY) == set(Method)
    assert len(method_table()) == len(Method)


@pytest.mark.parametrize(
    "method, provider, projection, cotrain",
    [
        (Method.BIGGAN, "GROUND_TRUTH", True, False),
        (Method.SINGLE_LABEL, "SINGLE", False, False),
        (Method.RANDOM_LABEL, "RANDOM", True, False),
        (Method.CLUSTERING, "CLUSTER", True, False),
        (Method.S3GAN, "S2L", True, False),
        (Method.S3GAN_CO, "COTRAIN", True, True),
    ],
)
def test_method_specs(method, provider, projection, cotrain):
    spec = get_method_spec(method)
    assert (spec.provider, spec.projection, spec.cotrain) == (provider, projection, cotrain)


def test_reference_medians():
    assert reference_median("S3GAN-k10") == (8.0, 78.7)
    assert reference_median("UNKNOWN") is None


def test_config_defaults_per_method():
    """Each method fills in the weights and label mode it uses."""
    s3gan = MethodConfig(method=Method.S3GAN, k_percent=10)
    assert s3gan.self_supervised
    assert s3gan.weights.gamma == 0.5
    assert (s3gan.weights.alpha, s3gan.weights.beta) == (0.2, 0.5)
    assert s3gan.label_mode == LabelMode.HARD

    co = MethodConfig(method=Method.S3GAN_CO, k_percent=20)
    assert co.weights.beta == 1.0
    assert co.weights.lambda_ == 0.2
    assert co.label_mode == LabelMode.SOFT
    assert co.num_unlabeled == co.optimizer.batch_size // 2

    assert MethodConfig(method=Method.CLUSTERING).n_clusters == 50


@pytest.mark.parametrize(
    "values",
    [
        {"method": "BIGGAN", "k_percent": 10},
        {"method": "BIGGAN_K"},
        {"method": "S2GAN", "self_supervised": True},
        {"method": "RANDOM_LABEL", "n_clusters": 5},
        {"method": "BIGGAN", "label_mode": "SOFT"},
        {"method": "S2GAN", "weights": {"lambda_": 0.1}},
        {"method": "SINGLE_LABEL", "weights": {"alpha": 0.1}},
        {"method": "S2GAN", "k_percent": 0},
        {"method": "S2GAN_CO", "num_unlabeled": 100},
    ],
)
def test_config_rejects_inconsistent_fields(values):
    with pytest.raises(PydanticValidationError):
        MethodConfig.model_validate(values)


@pytest.mark.parametrize(
    "values, name",
    [
        ({"method": "BIGGAN"}, "BIGGAN"),
        ({"method": "SINGLE_LABEL", "self_supervised": True}, "SINGLE_LABEL_SS"),
        ({"method": "CLUSTERING", "n_clusters": 100}, "CLUSTERING-c100"),
        ({"method": "S3GAN", "k_percent": 10}, "S3GAN-k10"),
        ({"method": "S2GAN", "k_percent": 5, "label_mode": "SOFT"}, "S2GAN-k5-soft"),
        ({"method": "S2GAN_CO", "k_percent": 20}, "S2GAN_CO-k20"),
        ({"method": "BIGGAN_K", "k_percent": 2.5}, "BIGGAN_K-k2.5"),
    ],
)
def test_run_names(values, name):
    assert MethodConfig.model_validate(values).name == name


def test_parse_flat_config():
    text = """
    # comment
    method = S3GAN   # trailing comment
    k_percent = 5, 10
    weights.gamma = 0.5
    """
    assert parse_flat_config(text) == {
        "method": "S3GAN",
        "k_percent": "5, 10",
        "weights.gamma": "0.5",
    }


@pytest.mark.parametrize("text", ["method S3GAN", "method = A\nmethod = B"])
def test_parse_flat_config_errors(text):
    with pytest.raises(ConfigurationError):
        parse_flat_config(text)


def test_flat_grid_expands_to_configs():
    """Comma lists expand to the cartesian product of configs."""
    configs = method_configs_from_flat(
        {"method": "S2GAN", "k_percent": "5,10", "label_mode": "HARD,SOFT"}
    )
    assert [c.name for c in configs] == ["S2GAN-k5", "S2GAN-k5-soft", "S2GAN-k10", "S2GAN-k10-soft"]


def test_flat_grid_reports_invalid_point():
    with pytest.raises(ConfigurationError):
        method_configs_from_flat({"method": "BIGGAN", "k_percent": "10"})


def test_formatted_config_loads_back(tmp_path):
    """format_flat output is a valid flat config for the same method."""
    config = MethodConfig(method=Method.S3GAN_CO, k_percent=10, total_g_steps=7)
    path = tmp_path / "s3gan_co.cfg"
    path.write_text(format_flat(config))
    assert load_method_configs(path) == [config]


def test_load_method_configs_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_method_configs(tmp_path / "absent.cfg")
