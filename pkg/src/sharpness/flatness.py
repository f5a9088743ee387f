"""Sharpness of one model around a single OS application."""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import torch

from models.components.losses import LossKind
from models.components.mlp import MlpModel
from sharpness.estimators import DEFAULT_PROBES, exact_last_layer_trace, hutchinson_trace
from sharpness.operators import ModelHessian, Scope
from shifting.solver import OsConfig, OsReport, apply_os


@dataclass(frozen=True)
class ShiftFlatness:
    """‖V‖²_F, the all-parameter Hutchinson trace and the exact ``V``-block trace, before and after OS.

    Both traces are taken on the OS batch. The Hutchinson estimates share their
    probes and finite-difference step, so their difference is paired.
    """

    norm_sq_before: float
    norm_sq_after: float
    trace_before: float
    trace_after: float
    trace_stderr: float
    exact_trace_before: float
    exact_trace_after: float
    report: OsReport

    @property
    def norm_decreased(self) -> bool:
        return self.norm_sq_after < self.norm_sq_before

    @property
    def trace_decreased(self) -> bool:
        return self.trace_after < self.trace_before

    @property
    def exact_trace_rel_change(self) -> float:
        return abs(self.exact_trace_after - self.exact_trace_before) / max(abs(self.exact_trace_before), 1e-300)


def shift_flatness(
    model: MlpModel,
    batch_inputs: torch.Tensor,
    batch_targets: torch.Tensor,
    os_config: OsConfig,
    kind: LossKind | str = LossKind.CROSS_ENTROPY,
    probes: int = DEFAULT_PROBES,
    seed: int = 0,
) -> ShiftFlatness:
    """Applies OS to `model` in place and measures the sharpness on the OS batch around it.

    :param model: A trained network; its final weight is replaced.
    :param batch_inputs: The OS batch.
    :param batch_targets: Labels of the OS batch, for the loss whose Hessian is taken.
    :param os_config: OS settings.
    :param probes: Rademacher probes of each Hutchinson estimate.
    :param seed: Probe seed, shared by the before and after estimates.
    """
    kind = LossKind(kind)
    before = ModelHessian(model, batch_inputs, batch_targets, kind, Scope.ALL)
    trace_before = hutchinson_trace(before, probes, seed)
    exact_before = exact_last_layer_trace(model, batch_inputs, batch_targets, kind)
    norm_sq_before = float(model.final_weight.detach().square().sum())

    report = apply_os(model, batch_inputs, os_config, batch_targets=batch_targets, kind=kind)

    after = ModelHessian(model, batch_inputs, batch_targets, kind, Scope.ALL, eps=before.eps)
    trace_after = hutchinson_trace(after, probes, seed)
    return ShiftFlatness(
        norm_sq_before=norm_sq_before,
        norm_sq_after=float(model.final_weight.detach().square().sum()),
        trace_before=trace_before.estimate,
        trace_after=trace_after.estimate,
        trace_stderr=math.hypot(trace_before.stderr, trace_after.stderr),
        exact_trace_before=exact_before,
        exact_trace_after=exact_last_layer_trace(model, batch_inputs, batch_targets, kind),
        report=report,
    )


def decrease_rate(results: Sequence[ShiftFlatness]) -> float:
    """Share of results where OS lowered both ‖V‖²_F and the Hutchinson trace."""
    if not results:
        raise ValueError("decrease_rate needs at least one result")
    return sum(r.norm_decreased and r.trace_decreased for r in results) / len(results)
