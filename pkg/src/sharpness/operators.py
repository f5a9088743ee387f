"""Hessian operators exposed through matrix-vector products.

The model Hessian is never materialised: `ModelHessian.matvec` takes central
differences of autograd gradients evaluated on a functional copy of the
parameters, so the model itself is never mutated.
"""

from collections.abc import Callable
from enum import StrEnum
from typing import Protocol

import torch
from torch.func import functional_call

from models.components.losses import LossKind, compute_loss
from models.components.mlp import MlpModel
from utils.errors import StepSizeError

MIN_PROBE_NORM = 1e-12
RELATIVE_EPS = 1e-4


class Scope(StrEnum):
    ALL = "all-parameters"
    LAST_LAYER = "last-layer"
    REMAINING = "remaining"


class HessianOperator(Protocol):
    @property
    def dim(self) -> int: ...

    def matvec(self, v: torch.Tensor) -> torch.Tensor: ...


class DenseOperator:
    """A symmetric matrix standing in for a Hessian."""

    def __init__(self, matrix: torch.Tensor) -> None:
        if matrix.dim() != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"Expected a square matrix, got {tuple(matrix.shape)}")
        self.matrix = matrix.to(torch.float64)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def matvec(self, v: torch.Tensor) -> torch.Tensor:
        return self.matrix @ v


def default_eps(w: torch.Tensor) -> float:
    return RELATIVE_EPS * (1.0 + float(w.abs().max()))


def finite_difference_hvp(
    gradient: Callable[[torch.Tensor], torch.Tensor],
    w: torch.Tensor,
    v: torch.Tensor,
    eps: float,
) -> torch.Tensor:
    """Central-difference Hessian-vector product ``(g(w+εv̂) − g(w−εv̂)) / 2ε · ‖v‖``.

    :param gradient: Maps a flat parameter vector to the flat gradient.
    :param w: The point of evaluation.
    :param v: The direction; its norm must exceed 1e-12.
    :param eps: The step along the unit direction.
    :return: The approximation of ``H·v``.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    norm = float(torch.linalg.vector_norm(v))
    if norm <= MIN_PROBE_NORM:
        raise ValueError(f"HVP direction has norm {norm:.3e}, expected > {MIN_PROBE_NORM}")

    direction = v / norm
    result = (gradient(w + eps * direction) - gradient(w - eps * direction)) / (2.0 * eps) * norm
    if not bool(torch.isfinite(result).all()):
        raise StepSizeError(f"Non-finite Hessian-vector product, try a larger eps <eps={eps}>")
    return result


def scope_names(model: MlpModel, scope: Scope | str) -> list[str]:
    """Names of the parameters a scope covers, in `named_parameters` order."""
    scope = Scope(scope)
    final = f"weights.{len(model.weights) - 1}"
    names = [name for name, _ in model.named_parameters()]
    if scope == Scope.LAST_LAYER:
        return [final]
    if scope == Scope.REMAINING:
        return [name for name in names if name != final]
    return names


class ModelHessian:
    """Hessian of the mean training loss with respect to a block of parameters.

    The block is chosen by `scope`: every parameter, only the final weight ``V``,
    or everything except ``V``. Parameters are flattened in `named_parameters`
    order.
    """

    def __init__(
        self,
        model: MlpModel,
        inputs: torch.Tensor,
        targets: torch.Tensor,
        kind: LossKind | str = LossKind.CROSS_ENTROPY,
        scope: Scope | str = Scope.ALL,
        eps: float | None = None,
    ) -> None:
        if inputs.shape[0] == 0:
            raise ValueError("Hessian needs a non-empty dataset")

        self.model = model
        self.inputs = inputs
        self.targets = targets
        self.kind = LossKind(kind)
        self.scope = Scope(scope)

        snapshot = {name: p.detach().clone() for name, p in model.named_parameters()}
        self.names = scope_names(model, self.scope)
        self.frozen = {name: t for name, t in snapshot.items() if name not in self.names}
        self.shapes = [snapshot[name].shape for name in self.names]
        self.w = torch.cat([snapshot[name].flatten() for name in self.names])
        self.eps = eps if eps is not None else default_eps(self.w)

    @property
    def dim(self) -> int:
        return self.w.numel()

    def _unflatten(self, flat: torch.Tensor) -> dict[str, torch.Tensor]:
        sizes = [shape.numel() for shape in self.shapes]
        chunks = torch.split(flat, sizes)
        return {
            name: chunk.reshape(shape) for name, chunk, shape in zip(self.names, chunks, self.shapes, strict=True)
        }

    def loss(self, flat: torch.Tensor) -> float:
        params = {**self.frozen, **self._unflatten(flat)}
        with torch.no_grad():
            logits = functional_call(self.model, params, (self.inputs,))
            return float(compute_loss(logits, self.targets, self.kind))

    def gradient(self, flat: torch.Tensor) -> torch.Tensor:
        """Flat gradient of the loss with respect to the scoped block at `flat`."""
        with torch.enable_grad():
            leaf = flat.detach().clone().requires_grad_(True)
            params = {**self.frozen, **self._unflatten(leaf)}
            logits = functional_call(self.model, params, (self.inputs,))
            (grad,) = torch.autograd.grad(compute_loss(logits, self.targets, self.kind), leaf)
        return grad.detach()

    def matvec(self, v: torch.Tensor) -> torch.Tensor:
        return finite_difference_hvp(self.gradient, self.w, v, self.eps)


def hvp(
    model: MlpModel,
    inputs: torch.Tensor,
    targets: torch.Tensor,
    v: torch.Tensor,
    kind: LossKind | str = LossKind.CROSS_ENTROPY,
    eps: float | None = None,
    scope: Scope | str = Scope.ALL,
) -> torch.Tensor:
    """Hessian-vector product of the mean loss over ``(inputs, targets)``.

    :param v: Flat direction over the scoped parameters.
    :param eps: Step size; defaults to ``1e-4 · (1 + ‖w‖∞)``.
    :return: The flat product ``H·v``.
    """
    return ModelHessian(model, inputs, targets, kind, scope, eps).matvec(v)
