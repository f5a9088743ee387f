from enum import StrEnum

import torch
import torch.nn.functional as F
from torch import nn
from torchmetrics.functional.classification import multiclass_accuracy


class LossKind(StrEnum):
    CROSS_ENTROPY = "cross_entropy"
    MSE = "mse"


def prepare_targets(targets: torch.Tensor, class_count: int, kind: LossKind) -> torch.Tensor:
    """Validates targets and brings them into the form the loss expects.

    Integer labels stay indices for cross-entropy and become one-hot rows for MSE.
    Real-valued ``(batch, classes)`` targets (soft or mixed labels) pass through.

    :param targets: Integer labels ``(batch,)`` or real targets ``(batch, classes)``.
    :param class_count: Number of output classes.
    :param kind: The loss kind.
    :return: Targets ready for `compute_loss`.
    """
    if not targets.is_floating_point():
        if targets.dim() != 1:
            raise ValueError(f"Integer labels must be 1-D, got shape {tuple(targets.shape)}")
        if targets.numel() and (int(targets.min()) < 0 or int(targets.max()) >= class_count):
            raise ValueError(f"Labels must lie in [0, {class_count}), got [{int(targets.min())}, {int(targets.max())}]")
        if kind == LossKind.MSE:
            return F.one_hot(targets.long(), class_count).to(torch.float64)
        return targets.long()

    if targets.dim() != 2 or targets.shape[1] != class_count:
        raise ValueError(f"Real targets must have shape (batch, {class_count}), got {tuple(targets.shape)}")
    return targets.to(torch.float64)


def compute_loss(logits: torch.Tensor, targets: torch.Tensor, kind: LossKind) -> torch.Tensor:
    """Mean loss over the batch.

    Cross-entropy uses a max-shifted log-softmax; MSE is ``(1/n) Σᵢ ‖f(xᵢ) − yᵢ‖²``.
    """
    targets = prepare_targets(targets, logits.shape[1], kind)
    if kind == LossKind.CROSS_ENTROPY:
        return F.cross_entropy(logits, targets)
    return ((logits - targets) ** 2).sum(dim=1).mean()


def loss_and_grad(
    model: nn.Module, inputs: torch.Tensor, targets: torch.Tensor, kind: LossKind
) -> tuple[float, dict[str, torch.Tensor]]:
    """Mean batch loss and its exact gradient for every named parameter.

    :return: The loss value and a ``{parameter name: gradient}`` dict.
    """
    names, params = zip(*model.named_parameters(), strict=True)
    with torch.enable_grad():
        loss = compute_loss(model(inputs), targets, kind)
        grads = torch.autograd.grad(loss, params, allow_unused=True)
    return float(loss), {
        name: torch.zeros_like(param) if grad is None else grad.detach()
        for name, param, grad in zip(names, params, grads, strict=True)
    }


def loss_second_derivative_diag(
    logits: torch.Tensor, targets: torch.Tensor, kind: LossKind
) -> torch.Tensor:
    """Diagonal second derivative of the mean batch loss w.r.t. each logit.

    Cross-entropy gives ``σ_p(1 − σ_p) / n``; MSE under the ``1/n`` batch
    convention gives the constant ``2 / n``. Targets drop out of both.
    """
    prepare_targets(targets, logits.shape[1], kind)
    n = logits.shape[0]
    if kind == LossKind.CROSS_ENTROPY:
        probs = torch.softmax(logits.to(torch.float64), dim=1)
        return probs * (1.0 - probs) / n
    return torch.full_like(logits, 2.0 / n, dtype=torch.float64)


def accuracy(logits: torch.Tensor, targets: torch.Tensor) -> float:
    labels = targets.argmax(dim=1) if targets.is_floating_point() else targets
    return float(
        multiclass_accuracy(logits, labels.long(), num_classes=logits.shape[1], average="micro")
    )


def evaluate(
    model: nn.Module, inputs: torch.Tensor, labels: torch.Tensor, kind: LossKind
) -> tuple[float, float]:
    """Full-batch mean loss and accuracy of `model` on a split."""
    with torch.no_grad():
        logits = model(inputs)
        return float(compute_loss(logits, labels, kind)), accuracy(logits, labels)
