"""Hinge adversarial losses, rotation self-supervision and auxiliary classifier losses."""

from typing import Optional

import torch
import torch.nn.functional as F

from fewlabel_gan.utils.validators import ValidationError, validate_nonnegative


def _require_nonempty(name: str, tensor: torch.Tensor) -> None:
    if tensor.numel() == 0:
        raise ValidationError(f"{name} must be nonempty")


def hinge_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """mean(max(0, 1 - D(x_real))) + mean(max(0, 1 + D(x_fake)))."""
    _require_nonempty("real_scores", real_scores)
    _require_nonempty("fake_scores", fake_scores)
    return F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()


def hinge_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """-mean(D(G(z, y), y))."""
    _require_nonempty("fake_scores", fake_scores)
    return -fake_scores.mean()


def rotation_loss(rotation_logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """
    Mean cross-entropy of the rotation classifier over all rotated copies.

    Args:
        rotation_logits: [4B, 4] logits.
        targets: [4B] rotation indices in RotationBatch layout.
    """
    _require_nonempty("rotation_logits", rotation_logits)
    return F.cross_entropy(rotation_logits, targets.long())


def classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy for hard labels [N] or soft label rows [N, K]."""
    _require_nonempty("logits", logits)
    if labels.is_floating_point():
        return F.cross_entropy(logits, labels)
    return F.cross_entropy(logits, labels.long())


def s2l_loss(
    rotation_logits: torch.Tensor,
    rotation_targets: torch.Tensor,
    class_logits: Optional[torch.Tensor],
    class_labels: Optional[torch.Tensor],
    gamma: float,
) -> torch.Tensor:
    """
    Rotation loss over every image plus gamma times the class loss on labeled images.

    The class term is evaluated on all rotated copies of the labeled images, so
    `class_logits` holds one row per rotated labeled copy and `class_labels`
    repeats each label once per rotation.

    Raises:
        ValidationError: If gamma > 0 and there are no labeled examples.
    """
    validate_nonnegative("gamma", gamma)
    loss = rotation_loss(rotation_logits, rotation_targets)
    has_labeled = class_logits is not None and class_logits.numel() > 0
    if gamma > 0:
        if not has_labeled:
            raise ValidationError("s2l_loss with gamma > 0 needs labeled examples")
        loss = loss + gamma * classification_loss(class_logits, class_labels)  # type: ignore
    return loss


def cotrain_d_loss(
    labeled_real_scores: torch.Tensor,
    cotrain_logits: torch.Tensor,
    labels: torch.Tensor,
    unlabeled_real_scores: Optional[torch.Tensor],
    fake_scores: torch.Tensor,
    lam: float,
) -> torch.Tensor:
    """
    Co-training discriminator loss.

    hinge(labeled reals) + lam * CE(c_CT on labeled reals)
    + hinge(unlabeled reals scored with c_CT's predicted labels) + hinge(fakes).

    `unlabeled_real_scores` must come from a projection conditioned on detached
    c_CT outputs; None or an empty tensor drops the third term.
    """
    validate_nonnegative("lambda", lam)
    _require_nonempty("labeled_real_scores", labeled_real_scores)
    loss = hinge_d_loss(labeled_real_scores, fake_scores)
    if lam > 0:
        loss = loss + lam * classification_loss(cotrain_logits, labels)
    if unlabeled_real_scores is not None and unlabeled_real_scores.numel() > 0:
        loss = loss + F.relu(1.0 - unlabeled_real_scores).mean()
    return loss


def d_selfsup_term(
    rotation_logits: torch.Tensor, targets: torch.Tensor, beta: float
) -> torch.Tensor:
    """beta * rotation loss of the discriminator on rotated real images."""
    validate_nonnegative("beta", beta)
    return beta * rotation_loss(rotation_logits, targets)


def g_selfsup_term(
    rotation_logits: torch.Tensor, targets: torch.Tensor, alpha: float
) -> torch.Tensor:
    """
    alpha * rotation loss on rotated generated images.

    The caller computes the logits with discriminator parameters frozen so the
    gradient reaches the generator only.
    """
    validate_nonnegative("alpha", alpha)
    return alpha * rotation_loss(rotation_logits, targets)
