"""Tests for the generator, discriminator and reference naming."""

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from fewlabel_gan.constants import FULL_DISCRIMINATOR_PARAMETERS, FULL_GENERATOR_PARAMETERS
from fewlabel_gan.core.gan_models import (
    Discriminator,
    Generator,
    count_parameters,
    discriminator_forward,
    generator_forward,
    load_state_arrays,
    parameter_table,
    state_arrays,
)
from fewlabel_gan.models.architecture import DiscriminatorSpec, GeneratorSpec
from fewlabel_gan.utils.validators import ValidationError


def test_full_scale_parameter_counts():
    """The 128x128 networks for K = 1000 match the reference sizes."""
    with torch.device("meta"):
        generator = Generator(GeneratorSpec.full_scale(1000))
        discriminator = Discriminator(DiscriminatorSpec.full_scale(1000))
    assert count_parameters(generator) == FULL_GENERATOR_PARAMETERS
    assert count_parameters(discriminator) == FULL_DISCRIMINATOR_PARAMETERS


def test_parameter_table_uses_reference_names(tiny_generator_spec, tiny_discriminator_spec):
    """Kernels are listed as scope/block/layer/kernel in (kh, kw, in, out) layout."""
    g_rows = {r.name: r for r in parameter_table(Generator(tiny_generator_spec))}
    d_rows = {r.name: r for r in parameter_table(Discriminator(tiny_discriminator_spec))}

    ch = tiny_generator_spec.ch
    assert g_rows["generator/B1/up_conv1/kernel"].shape == (3, 3, 4 * ch, 4 * ch)
    assert "generator/B1/bn1/condition/gamma/kernel" in g_rows
    assert "generator/final_norm/gamma" in g_rows
    assert "discriminator/B1/same_conv1/kernel" in d_rows
    assert d_rows["discriminator_projection/kernel"].shape == (4, 4 * ch)
    assert sum(r.size for r in g_rows.values()) == count_parameters(Generator(tiny_generator_spec))


def test_generator_output_shape_and_range(tiny_generator_spec):
    """A desk generator maps (z, y) to 32x32 RGB images in [-1, 1]."""
    generator = Generator(tiny_generator_spec)
    z = torch.randn(4, tiny_generator_spec.latent_dim)
    images = generator_forward(generator, z, torch.tensor([0, 1, 2, 3]))
    assert images.shape == (4, 3, 32, 32)
    assert images.min() >= -1 and images.max() <= 1


def test_generator_soft_one_hot_matches_hard(tiny_generator_spec):
    """One-hot distributions condition exactly like class indices."""
    generator = Generator(tiny_generator_spec).eval()
    z = torch.randn(3, tiny_generator_spec.latent_dim)
    y = torch.tensor([2, 0, 1])
    hard = generator(z, y)
    soft = generator(z, F.one_hot(y, 4).float())
    assert torch.allclose(hard, soft, atol=1e-6)


def test_generator_rejects_wrong_latent_size(tiny_generator_spec):
    generator = Generator(tiny_generator_spec)
    with pytest.raises(ValidationError):
        generator(torch.randn(2, tiny_generator_spec.latent_dim + 1), torch.tensor([0, 1]))


def test_generator_spec_rejects_uneven_chunks():
    """The latent must split into one chunk per block plus one."""
    with pytest.raises(ValueError):
        GeneratorSpec.desk_scale(4, latent_dim=15)


def test_discriminator_output_heads(tiny_discriminator_spec):
    """Score, representation and optional heads have the documented shapes."""
    spec = tiny_discriminator_spec.model_copy(update={"rotation_head": True, "cotrain_head": True})
    discriminator = Discriminator(spec)
    x = torch.randn(5, 3, 32, 32)
    out = discriminator_forward(discriminator, x, torch.tensor([0, 1, 2, 3, 0]), True, True)
    assert out.score.shape == (5,)
    assert out.representation.shape == (5, spec.representation_dim)
    assert out.rotation_logits.shape == (5, 4)
    assert out.cotrain_logits.shape == (5, 4)


def test_discriminator_score_is_logit_plus_projection(tiny_discriminator_spec):
    """D(x, y) = c(D~(x)) + D~(x)^T W^T y."""
    discriminator = Discriminator(tiny_discriminator_spec).eval()
    x = torch.randn(3, 3, 32, 32)
    y = torch.tensor([1, 3, 0])
    out = discriminator(x, y)
    weight = discriminator.projection_weight()
    expected = out.unconditional_logit + (weight[y] * out.representation).sum(dim=1)
    assert torch.allclose(out.score, expected, atol=1e-5)


def test_discriminator_without_projection_ignores_labels(tiny_discriminator_spec):
    """num_classes = 0 removes the projection; scores do not depend on y."""
    spec = tiny_discriminator_spec.model_copy(update={"num_classes": 0})
    discriminator = Discriminator(spec).eval()
    x = torch.randn(2, 3, 32, 32)
    assert not discriminator.has_projection
    assert torch.equal(discriminator(x, torch.tensor([0, 1])).score, discriminator(x).score)


def test_discriminator_rejects_disabled_head(tiny_discriminator_spec):
    discriminator = Discriminator(tiny_discriminator_spec)
    with pytest.raises(ValidationError):
        discriminator(torch.randn(2, 3, 32, 32), rotation=True)


def test_state_arrays_round_trip(tiny_generator_spec):
    """Arrays keyed by reference name restore an identical generator."""
    source = Generator(tiny_generator_spec)
    source(torch.randn(4, tiny_generator_spec.latent_dim), torch.tensor([0, 1, 2, 3]))
    arrays = state_arrays(source)
    assert all(isinstance(a, np.ndarray) for a in arrays.values())

    torch.manual_seed(99)
    target = Generator(tiny_generator_spec)
    load_state_arrays(target, arrays)
    z = torch.randn(2, tiny_generator_spec.latent_dim)
    y = torch.tensor([1, 2])
    assert torch.equal(source.eval()(z, y), target.eval()(z, y))


def test_load_state_arrays_reports_missing_tensor(tiny_generator_spec):
    arrays = state_arrays(Generator(tiny_generator_spec))
    arrays.pop("generator/final_conv/kernel")
    with pytest.raises(ValidationError):
        load_state_arrays(Generator(tiny_generator_spec), arrays)
