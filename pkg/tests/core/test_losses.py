"""Tests for the adversarial, rotation, classifier and co-training losses."""

import math

import pytest
import torch

from fewlabel_gan.core.losses import (
    classification_loss,
    cotrain_d_loss,
    d_selfsup_term,
    g_selfsup_term,
    hinge_d_loss,
    hinge_g_loss,
    rotation_loss,
    s2l_loss,
)
from fewlabel_gan.utils.validators import ValidationError


def _t(values):
    return torch.tensor(values, dtype=torch.float64)


def test_hinge_d_loss_by_hand():
    """real [0.5, -1], fake [0.3] -> mean(0.5, 2) + mean(1.3) = 2.55."""
    assert hinge_d_loss(_t([0.5, -1.0]), _t([0.3])).item() == pytest.approx(2.55, abs=1e-9)


def test_hinge_d_loss_zero_beyond_margin():
    assert hinge_d_loss(_t([1.0, 3.0]), _t([-1.0, -2.0])).item() == 0.0


def test_hinge_g_loss_by_hand():
    """fake [1, -2, 4] -> -1."""
    assert hinge_g_loss(_t([1.0, -2.0, 4.0])).item() == pytest.approx(-1.0, abs=1e-9)


def test_hinge_losses_reject_empty_inputs():
    with pytest.raises(ValidationError):
        hinge_d_loss(_t([]), _t([0.0]))
    with pytest.raises(ValidationError):
        hinge_g_loss(_t([]))


def test_rotation_loss_by_hand():
    """logits [1, 0, 0, 0], target 0 -> -log(e / (e + 3))."""
    loss = rotation_loss(_t([[1.0, 0.0, 0.0, 0.0]]), torch.tensor([0]))
    assert loss.item() == pytest.approx(-math.log(math.e / (math.e + 3)), abs=1e-9)


def test_rotation_loss_is_finite_for_large_logits():
    """Cross-entropy stays finite when logits are huge."""
    loss = rotation_loss(_t([[1e4, -1e4, 0.0, 0.0]]), torch.tensor([1]))
    assert torch.isfinite(loss)
    assert loss.item() == pytest.approx(2e4)


def test_classification_loss_soft_one_hot_matches_hard():
    logits = torch.randn(5, 3, dtype=torch.float64)
    labels = torch.tensor([0, 2, 1, 1, 0])
    soft = torch.nn.functional.one_hot(labels, 3).double()
    assert torch.allclose(classification_loss(logits, labels), classification_loss(logits, soft))


def test_s2l_loss_gamma_zero_is_rotation_loss():
    """gamma = 0 drops the class term entirely."""
    logits = torch.randn(8, 4, dtype=torch.float64)
    targets = torch.arange(8) // 2
    expected = rotation_loss(logits, targets)
    assert torch.equal(s2l_loss(logits, targets, None, None, gamma=0.0), expected)


def test_s2l_loss_is_monotone_in_gamma():
    """With a positive class term, more gamma never lowers the loss."""
    rot_logits = torch.randn(8, 4, dtype=torch.float64)
    rot_targets = torch.arange(8) // 2
    class_logits = torch.randn(4, 3, dtype=torch.float64)
    labels = torch.tensor([0, 1, 2, 0])
    losses = [
        s2l_loss(rot_logits, rot_targets, class_logits, labels, gamma).item()
        for gamma in (0.0, 0.1, 0.5, 1.0)
    ]
    assert losses == sorted(losses)


def test_s2l_loss_needs_labels_when_gamma_positive():
    logits = torch.randn(4, 4)
    with pytest.raises(ValidationError):
        s2l_loss(logits, torch.arange(4), None, None, gamma=0.5)


def test_cotrain_loss_by_hand():
    """One labeled real at 0, uniform K=4 logits, one fake at 0, lambda = 1 -> 2 + ln 4."""
    loss = cotrain_d_loss(
        labeled_real_scores=_t([0.0]),
        cotrain_logits=_t([[0.0, 0.0, 0.0, 0.0]]),
        labels=torch.tensor([2]),
        unlabeled_real_scores=None,
        fake_scores=_t([0.0]),
        lam=1.0,
    )
    assert loss.item() == pytest.approx(2.0 + math.log(4.0), abs=1e-9)


def test_cotrain_loss_reduces_to_hinge():
    """lambda = 0 and no unlabeled reals gives the plain hinge loss."""
    real, fake = torch.randn(6, dtype=torch.float64), torch.randn(6, dtype=torch.float64)
    logits = torch.randn(6, 3, dtype=torch.float64)
    labels = torch.tensor([0, 1, 2, 0, 1, 2])
    loss = cotrain_d_loss(real, logits, labels, torch.empty(0, dtype=torch.float64), fake, 0.0)
    assert loss.item() == pytest.approx(hinge_d_loss(real, fake).item(), abs=1e-6)


def test_cotrain_loss_adds_unlabeled_hinge():
    """Unlabeled real scores contribute mean(max(0, 1 - s))."""
    base = cotrain_d_loss(_t([2.0]), _t([[5.0, 0.0]]), torch.tensor([0]), None, _t([-2.0]), 0.0)
    with_unlabeled = cotrain_d_loss(
        _t([2.0]), _t([[5.0, 0.0]]), torch.tensor([0]), _t([0.0, 0.5]), _t([-2.0]), 0.0
    )
    assert with_unlabeled.item() - base.item() == pytest.approx(0.75)


def test_selfsup_terms_scale_rotation_loss():
    """Both self-supervision terms are weight times the rotation cross-entropy."""
    logits = torch.randn(8, 4, dtype=torch.float64)
    targets = torch.arange(8) // 2
    base = rotation_loss(logits, targets).item()
    assert d_selfsup_term(logits, targets, 1.0).item() == pytest.approx(base)
    assert g_selfsup_term(logits, targets, 0.2).item() == pytest.approx(0.2 * base)


def test_selfsup_term_perfect_logits_is_zero():
    logits = torch.eye(4, dtype=torch.float64) * 1e3
    assert d_selfsup_term(logits, torch.arange(4), 1.0).item() == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("fn", [d_selfsup_term, g_selfsup_term])
def test_selfsup_terms_reject_negative_weights(fn):
    with pytest.raises(ValidationError):
        fn(torch.randn(4, 4), torch.arange(4), -0.1)


def test_loss_gradients_match_finite_differences():
    """Hinge, rotation and co-training losses pass gradcheck on tiny float64 inputs."""
    real = _t([0.3, -0.4, 1.7]).requires_grad_()
    fake = _t([0.2, -1.3]).requires_grad_()
    logits = torch.randn(4, 4, dtype=torch.float64, requires_grad=True)
    targets = torch.arange(4)

    assert torch.autograd.gradcheck(hinge_d_loss, (real, fake))
    assert torch.autograd.gradcheck(hinge_g_loss, (fake,))
    assert torch.autograd.gradcheck(lambda x: rotation_loss(x, targets), (logits,))
    assert torch.autograd.gradcheck(
        lambda r, f, x: cotrain_d_loss(r, x, targets[:3], _t([0.1]), f, 0.5),
        (real, fake, logits[:3].detach().requires_grad_()),
    )
