from collections.abc import Callable, Iterable, Sequence
from typing import Any, NamedTuple

import torch
from torch import nn

from models.components.losses import LossKind, compute_loss

type Backward = Callable[[torch.Tensor], None]


class StepResult(NamedTuple):
    """Mean batch loss at the pre-step weights and the logits it came from."""

    loss: float
    logits: torch.Tensor


class SAM(torch.optim.SGD):
    """Sharpness-aware SGD: the update uses the gradient at ``w + ρ·g/‖g‖₂``.

    The norm is global over all parameter groups. Call `first_step` after the
    first backward pass and `second_step` after the backward pass at the
    perturbed point; `step` does both given a closure.
    """

    def __init__(
        self,
        params: Iterable[Any],
        lr: float,
        momentum: float = 0.0,
        dampening: float = 0.0,
        weight_decay: float = 0.0,
        nesterov: bool = False,
        rho: float = 0.05,
    ) -> None:
        if rho < 0.0:
            raise ValueError(f"Invalid rho, should be non-negative: {rho}")

        super().__init__(
            params, lr=lr, momentum=momentum, dampening=dampening, weight_decay=weight_decay, nesterov=nesterov
        )

        self.defaults["rho"] = rho
        for param_group in self.param_groups:
            param_group.setdefault("rho", rho)

    @torch.no_grad()
    def first_step(self, zero_grad: bool = False) -> None:
        grad_norm = self._grad_norm()
        for group in self.param_groups:
            # zero gradient: no ascent direction, fall back to the plain gradient
            scale = group["rho"] / grad_norm if grad_norm > 0.0 else 0.0
            for p in group["params"]:
                if p.grad is None:
                    continue
                e_w = p.grad * scale
                p.add_(e_w)
                self.state[p]["e_w"] = e_w

        if zero_grad:
            self.zero_grad()

    @torch.no_grad()
    def second_step(self, zero_grad: bool = False) -> None:
        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is None or "e_w" not in self.state[p]:
                    continue
                p.sub_(self.state[p]["e_w"])

        super().step()

        if zero_grad:
            self.zero_grad()

    def step(self, closure: Callable[[], Any] | None = None) -> None:
        if closure is None:
            raise NotImplementedError("SAM needs a closure, or call `first_step` and `second_step` explicitly")

        with torch.enable_grad():
            closure()
        self.first_step(zero_grad=True)
        with torch.enable_grad():
            closure()
        self.second_step()

    def _grad_norm(self) -> float:
        norms = [p.grad.norm(p=2) for group in self.param_groups for p in group["params"] if p.grad is not None]
        if not norms:
            return 0.0
        return float(torch.linalg.vector_norm(torch.stack(norms)))


def build_optimizer(
    params: Iterable[nn.Parameter],
    lr: float = 0.1,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
    nesterov: bool = True,
    sam_rho: float | None = None,
) -> torch.optim.SGD:
    """SGD with classic L2 weight decay, or `SAM` when `sam_rho` is set.

    Nesterov is only enabled with a positive momentum.
    """
    if lr < 0:
        raise ValueError(f"lr must be non-negative, got {lr}")
    kwargs = {"lr": lr, "momentum": momentum, "weight_decay": weight_decay, "nesterov": nesterov and momentum > 0}
    if sam_rho is not None:
        return SAM(params, rho=sam_rho, **kwargs)
    return torch.optim.SGD(params, **kwargs)


def build_scheduler(
    optimizer: torch.optim.Optimizer,
    max_epochs: int,
    kind: str = "step",
    milestone_fractions: Sequence[float] = (0.5, 0.75),
    milestone_epochs: Sequence[int] | None = None,
    gamma: float = 0.1,
    eta_min: float = 0.0,
) -> torch.optim.lr_scheduler.LRScheduler | None:
    """Per-epoch learning-rate schedule.

    :param kind: ``"step"`` (×`gamma` at milestones), ``"cosine"`` or ``"constant"``.
    :param milestone_fractions: Step milestones as fractions of `max_epochs`.
    :param milestone_epochs: Absolute step milestones; override the fractions.
    :return: The scheduler, or ``None`` for a constant rate.
    """
    if kind == "constant":
        return None
    if kind == "step":
        if milestone_epochs is not None:
            milestones = sorted(int(e) for e in milestone_epochs)
        else:
            milestones = sorted(round(f * max_epochs) for f in milestone_fractions)
        return torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones=milestones, gamma=gamma)
    if kind == "cosine":
        return torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=max(1, max_epochs), eta_min=eta_min)
    raise ValueError(f"Unknown schedule <{kind}>, expected step, cosine or constant")


def _backward(loss: torch.Tensor) -> None:
    loss.backward()


def sgd_step(
    model: nn.Module,
    inputs: torch.Tensor,
    targets: torch.Tensor,
    optimizer: torch.optim.Optimizer,
    kind: LossKind | str = LossKind.CROSS_ENTROPY,
    backward: Backward = _backward,
) -> StepResult:
    """One optimizer step on the mean batch loss.

    :param backward: Backward hook, e.g. `LightningModule.manual_backward`.
    """
    optimizer.zero_grad()
    logits = model(inputs)
    loss = compute_loss(logits, targets, LossKind(kind))
    backward(loss)
    optimizer.step()
    return StepResult(float(loss.detach()), logits.detach())


def sam_step(
    model: nn.Module,
    inputs: torch.Tensor,
    targets: torch.Tensor,
    optimizer: SAM,
    kind: LossKind | str = LossKind.CROSS_ENTROPY,
    backward: Backward = _backward,
) -> StepResult:
    """One SAM step: ascend to the perturbed point, take its gradient, restore and update."""
    kind = LossKind(kind)
    optimizer.zero_grad()
    logits = model(inputs)
    loss = compute_loss(logits, targets, kind)
    backward(loss)
    optimizer.first_step(zero_grad=True)

    backward(compute_loss(model(inputs), targets, kind))
    optimizer.second_step(zero_grad=True)
    return StepResult(float(loss.detach()), logits.detach())
