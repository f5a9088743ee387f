from sharpness.callback import HessianTraceMonitor
from sharpness.collapse import NcReport, nc1_metric
from sharpness.estimators import (
    EigenEstimate,
    HessianReport,
    TraceEstimate,
    exact_last_layer_trace,
    hessian_report,
    hutchinson_trace,
    top_eigenvalue,
)
from sharpness.flatness import ShiftFlatness, decrease_rate, shift_flatness
from sharpness.operators import DenseOperator, HessianOperator, ModelHessian, Scope, finite_difference_hvp, hvp

__all__ = [
    "DenseOperator",
    "EigenEstimate",
    "HessianOperator",
    "HessianReport",
    "HessianTraceMonitor",
    "ModelHessian",
    "NcReport",
    "Scope",
    "ShiftFlatness",
    "TraceEstimate",
    "decrease_rate",
    "exact_last_layer_trace",
    "finite_difference_hvp",
    "hessian_report",
    "hutchinson_trace",
    "hvp",
    "nc1_metric",
    "shift_flatness",
    "top_eigenvalue",
]
