"""Tests for spectral normalization, conditional BatchNorm, attention and projection."""

import logging

import pytest
import torch
import torch.nn.functional as F

from fewlabel_gan.core.layers import (
    ConditionalBatchNorm2d,
    NonLocalBlock,
    SNConv2d,
    SNLinear,
    SpectralNormState,
    as_distribution,
    conditional_batchnorm,
    projection_term,
    spectral_normalize,
)
from fewlabel_gan.utils.validators import StateError, ValidationError


@pytest.mark.parametrize("index", range(20))
def test_spectral_norm_converges_to_unit_norm(index):
    """After 50 power iterations the normalized matrix has top singular value ~1."""
    generator = torch.Generator().manual_seed(index)
    weight = torch.randn(16, 24, generator=generator, dtype=torch.float64) * (index + 1)
    state = SpectralNormState.for_weight(weight, generator=generator)
    for _ in range(50):
        normalized = spectral_normalize(weight, state)
    top = torch.linalg.svdvals(normalized)[0].item()
    assert 0.99 <= top <= 1.01


def test_spectral_norm_of_conv_kernel_uses_flattened_view():
    """A (out, in, kh, kw) kernel is normalized as an (out, in*kh*kw) matrix."""
    kernel = torch.randn(6, 3, 3, 3, dtype=torch.float64)
    state = SpectralNormState.for_weight(kernel, num_iterations=50)
    normalized = spectral_normalize(kernel, state)
    top = torch.linalg.svdvals(normalized.reshape(6, -1))[0].item()
    assert top == pytest.approx(1.0, abs=0.01)


def test_spectral_norm_zero_weight_is_skipped_with_warning(caplog):
    """An all-zero weight comes back unchanged and warns once."""
    weight = torch.zeros(3, 4)
    state = SpectralNormState.for_weight(weight)
    with caplog.at_level(logging.WARNING):
        out = spectral_normalize(weight, state)
        spectral_normalize(weight, state)
    assert torch.equal(out, weight)
    assert sum("all-zero" in r.getMessage() for r in caplog.records) == 1


def test_spectral_norm_rejects_zero_iterations():
    """Zero power iterations is a validation error, not an unbound singular vector."""
    weight = torch.randn(3, 4)
    with pytest.raises(ValidationError):
        SpectralNormState.for_weight(weight, num_iterations=0)
    state = SpectralNormState.for_weight(weight)
    state.num_iterations = 0
    with pytest.raises(ValidationError):
        spectral_normalize(weight, state)


def test_spectral_norm_without_update_keeps_u():
    """Evaluation-mode calls leave the power-iteration vector alone."""
    weight = torch.randn(5, 7)
    state = SpectralNormState.for_weight(weight)
    before = state.u.clone()
    spectral_normalize(weight, state, update=False)
    assert torch.equal(state.u, before)
    spectral_normalize(weight, state, update=True)
    assert not torch.equal(state.u, before)


def test_sn_layers_update_u_only_in_training():
    """The `u` buffer moves in train mode and stays fixed in eval mode."""
    layer = SNLinear(6, 4)
    x = torch.randn(2, 6)
    layer.eval()
    before = layer.u.clone()
    layer(x)
    assert torch.equal(layer.u, before)
    layer.train()
    layer(x)
    assert not torch.equal(layer.u, before)


def test_sn_conv_matches_plain_conv_with_normalized_kernel():
    """SNConv2d convolves with weight / sigma."""
    layer = SNConv2d(3, 4, 3, padding=1)
    layer.eval()
    x = torch.randn(2, 3, 5, 5)
    expected = F.conv2d(x, layer.normalized_weight(), layer.bias, padding=1)
    assert torch.allclose(layer(x), expected)


def test_spectral_norm_gradient():
    """Finite-difference check through the normalized weight (sigma carries the gradient)."""
    left, _ = torch.linalg.qr(torch.randn(4, 4, dtype=torch.float64))
    right, _ = torch.linalg.qr(torch.randn(5, 4, dtype=torch.float64))
    singular = torch.tensor([4.0, 1.0, 0.5, 0.25], dtype=torch.float64)
    weight = (left * singular) @ right.t()
    weight.requires_grad_(True)
    state = SpectralNormState.for_weight(weight.detach(), num_iterations=30)
    spectral_normalize(weight.detach(), state)

    def fn(w):
        return spectral_normalize(w, state, update=False)

    assert torch.autograd.gradcheck(fn, (weight,), eps=1e-6, atol=1e-4)


def test_as_distribution_hard_and_soft():
    """Hard labels become one-hot rows; soft rows are validated."""
    assert as_distribution(torch.tensor([2, 0]), 3).tolist() == [[0, 0, 1], [1, 0, 0]]
    soft = torch.tensor([[0.25, 0.75]])
    assert torch.equal(as_distribution(soft, 2), soft)
    with pytest.raises(ValidationError):
        as_distribution(torch.tensor([[0.5, 0.6]]), 2)
    with pytest.raises(ValidationError):
        as_distribution(torch.tensor([3]), 3)


def test_projection_term_hard_soft_agree():
    """A one-hot soft label projects exactly like the hard index."""
    weight = torch.randn(4, 6, dtype=torch.float64)
    representation = torch.randn(3, 6, dtype=torch.float64)
    hard = torch.tensor([1, 3, 0])
    soft = F.one_hot(hard, 4).double()
    expected = (weight[hard] * representation).sum(dim=1)
    assert torch.allclose(projection_term(representation, weight, hard), expected)
    assert torch.allclose(projection_term(representation, weight, soft), expected)


def test_projection_term_soft_is_convex_combination():
    """Soft labels project onto the weighted average of class embeddings."""
    weight = torch.tensor([[1.0, 0.0], [0.0, 2.0]], dtype=torch.float64)
    representation = torch.tensor([3.0, 5.0], dtype=torch.float64)
    y = torch.tensor([0.25, 0.75], dtype=torch.float64)
    assert projection_term(representation, weight, y).item() == pytest.approx(
        0.25 * 3.0 + 0.75 * 10.0
    )


def test_projection_term_rejects_out_of_range_index():
    with pytest.raises(ValidationError):
        projection_term(torch.randn(2, 3), torch.randn(2, 3), torch.tensor([0, 2]))


def test_projection_term_gradient():
    """Finite-difference check of the projection w.r.t. representation and weight."""
    representation = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
    weight = torch.randn(5, 4, dtype=torch.float64, requires_grad=True)
    y = torch.softmax(torch.randn(3, 5, dtype=torch.float64), dim=1)
    assert torch.autograd.gradcheck(
        lambda r, w: projection_term(r, w, y), (representation, weight)
    )


def test_conditional_batchnorm_starts_as_plain_batchnorm():
    """Zero-initialized condition maps give gamma = 1 and beta = 0."""
    layer = ConditionalBatchNorm2d(3, condition_dim=5)
    h = torch.randn(4, 3, 2, 2)
    condition = torch.randn(4, 5)
    expected = F.batch_norm(h, None, None, training=True, eps=layer.bn.eps)
    assert torch.allclose(conditional_batchnorm(h, condition, layer), expected, atol=1e-6)


def test_conditional_batchnorm_uses_condition():
    """Scale and shift follow the condition vector per example."""
    layer = ConditionalBatchNorm2d(2, condition_dim=3)
    with torch.no_grad():
        layer.condition["gamma"].weight.fill_(1.0)
        layer.condition["beta"].weight.fill_(0.5)
    h = torch.randn(4, 2, 3, 3)
    condition = torch.eye(3)[[0, 1, 2, 0]]
    normalized = F.batch_norm(h, None, None, training=True, eps=layer.bn.eps)
    assert torch.allclose(layer(h, condition), normalized * 2.0 + 0.5, atol=1e-5)


def test_conditional_batchnorm_rejects_single_example_in_training():
    layer = ConditionalBatchNorm2d(2, condition_dim=3)
    with pytest.raises(StateError):
        layer(torch.randn(1, 2, 3, 3), torch.randn(1, 3))
    layer.eval()
    assert layer(torch.randn(1, 2, 3, 3), torch.randn(1, 3)).shape == (1, 2, 3, 3)


def test_conditional_batchnorm_gradient():
    """Finite-difference check in float64, training mode."""
    layer = ConditionalBatchNorm2d(2, condition_dim=3).double()
    with torch.no_grad():
        layer.condition["gamma"].weight.normal_()
        layer.condition["beta"].weight.normal_()
    h = torch.randn(3, 2, 2, 2, dtype=torch.float64, requires_grad=True)
    condition = torch.randn(3, 3, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda a, b: layer(a, b), (h, condition))


def test_non_local_block_is_identity_at_init():
    """sigma starts at 0, so the block passes its input through."""
    block = NonLocalBlock(16)
    x = torch.randn(2, 16, 4, 4)
    assert torch.equal(block(x), x)
    with torch.no_grad():
        block.sigma.fill_(1.0)
    out = block(x)
    assert out.shape == x.shape
    assert not torch.allclose(out, x)


def test_spectral_norm_of_diagonal_weight():
    """diag(4, 1) normalizes to diag(1, 0.25)."""
    weight = torch.diag(torch.tensor([4.0, 1.0], dtype=torch.float64))
    state = SpectralNormState.for_weight(weight, generator=torch.Generator().manual_seed(0))
    for _ in range(50):
        normalized = spectral_normalize(weight, state)
    expected = torch.diag(torch.tensor([1.0, 0.25], dtype=torch.float64))
    assert torch.allclose(normalized, expected, atol=1e-6)


def test_projection_term_by_hand():
    """repr [1, 0] against class 1 with embedding [5, 7] scores 5."""
    weight = torch.tensor([[2.0, 3.0], [5.0, 7.0]])
    assert projection_term(torch.tensor([1.0, 0.0]), weight, 1).item() == pytest.approx(5.0)


def test_conditional_batchnorm_moments_follow_condition():
    """With a constant condition the output per channel has mean beta and std |gamma|."""
    layer = ConditionalBatchNorm2d(3, condition_dim=2)
    with torch.no_grad():
        layer.condition["gamma"].weight.copy_(torch.tensor([[0.5, 0.0], [-3.0, 0.0], [1.0, 1.0]]))
        layer.condition["beta"].weight.copy_(torch.tensor([[1.0, 0.0], [0.0, 2.0], [-1.0, 0.5]]))
    h = torch.randn(64, 3, 4, 4, dtype=torch.float64) * 3 + 2
    layer.double()
    condition = torch.tensor([[1.0, 1.0]], dtype=torch.float64).expand(64, 2)
    out = layer(h, condition)
    gamma = 1.0 + torch.tensor([0.5, -3.0, 2.0], dtype=torch.float64)
    beta = torch.tensor([1.0, 2.0, -0.5], dtype=torch.float64)
    mean = out.mean(dim=(0, 2, 3))
    std = out.transpose(0, 1).reshape(3, -1).std(dim=1, unbiased=False)
    assert torch.allclose(mean, beta, atol=1e-4)
    assert torch.allclose(std, gamma.abs(), atol=1e-3)
