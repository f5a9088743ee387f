import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from models.components.losses import LossKind, loss_second_derivative_diag
from models.components.mlp import MlpModel
from sharpness.collapse import NcReport, nc1_metric
from sharpness.operators import HessianOperator, ModelHessian, Scope
from utils.errors import DegenerateScatterError, NumericalError
from utils.ranked_logger import RankedLogger

log = RankedLogger(__name__)

DEFAULT_PROBES = 100


@dataclass(frozen=True)
class TraceEstimate:
    estimate: float
    stderr: float
    probes: int


@dataclass(frozen=True)
class EigenEstimate:
    value: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class HessianReport:
    exact_last_layer_trace: float
    hutchinson_trace: float
    hutchinson_stderr: float
    probes: int
    top_eigenvalue: float
    power_iters: int
    eigen_converged: bool
    scope: str
    param_count: int
    nc1: NcReport | None = None

    def __post_init__(self) -> None:
        if self.probes < 1 or self.hutchinson_stderr < 0:
            raise ValueError("probes must be >= 1 and stderr >= 0")
        values = (self.exact_last_layer_trace, self.hutchinson_trace, self.hutchinson_stderr, self.top_eigenvalue)
        if not all(math.isfinite(v) for v in values):
            raise NumericalError(f"Non-finite Hessian report <values={values}>")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def exact_last_layer_trace(
    model: MlpModel, inputs: torch.Tensor, targets: torch.Tensor, kind: LossKind | str = LossKind.CROSS_ENTROPY
) -> float:
    """Closed-form trace of the Hessian block of the final weight ``V``.

    Equals ``Σᵢ Σ_p (∂²L/∂f_p²)ᵢ ‖xᵢ‖²`` over penultimate features ``xᵢ``; the
    ``1/n`` of the mean loss is already part of the second derivatives.
    """
    if inputs.shape[0] == 0:
        raise ValueError("exact_last_layer_trace needs a non-empty dataset")
    with torch.no_grad():
        features = model.features(inputs)
        logits = model(inputs)
    curvature = loss_second_derivative_diag(logits, targets, LossKind(kind))
    return float((curvature.sum(dim=1) * (features**2).sum(dim=1)).sum())


def _probe_rngs(seed: int, count: int) -> list[np.random.Generator]:
    # probe i always draws from child i of the master seed, in any execution order
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(count)]


def hutchinson_trace(operator: HessianOperator, probes: int = DEFAULT_PROBES, seed: int = 0) -> TraceEstimate:
    """Hutchinson estimate ``mean(zᵀHz)`` over Rademacher probes.

    :param operator: The Hessian (model or synthetic) as a matrix-vector product.
    :param probes: Number of probes, at least 2.
    :param seed: Master seed; probe ``i`` uses the ``i``-th spawned child sequence.
    :return: The estimate and its standard error ``std / √probes``.
    """
    if probes < 2:
        raise ValueError(f"probes must be >= 2, got {probes}")

    samples = np.empty(probes, dtype=np.float64)
    for i, rng in enumerate(_probe_rngs(seed, probes)):
        z = torch.from_numpy(rng.choice(np.array([-1.0, 1.0]), size=operator.dim))
        samples[i] = float(torch.dot(z, operator.matvec(z)))

    stderr = float(samples.std(ddof=1) / math.sqrt(probes))
    return TraceEstimate(estimate=float(samples.mean()), stderr=stderr, probes=probes)


def top_eigenvalue(operator: HessianOperator, iters: int = 100, tol: float = 1e-6, seed: int = 0) -> EigenEstimate:
    """Power iteration for the eigenvalue of largest magnitude.

    Stops when two successive Rayleigh quotients agree to `tol` relative. An
    unconverged run returns its last quotient flagged ``converged=False``.
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")

    start = torch.from_numpy(np.random.default_rng(seed).standard_normal(operator.dim))
    q = start / torch.linalg.vector_norm(start)
    hq = operator.matvec(q)
    value = float(torch.dot(q, hq))

    for iteration in range(1, iters + 1):
        norm = torch.linalg.vector_norm(hq)
        if float(norm) == 0.0:
            return EigenEstimate(value=0.0, iterations=iteration, converged=True)
        q = hq / norm
        hq = operator.matvec(q)
        quotient = float(torch.dot(q, hq))
        if abs(quotient - value) <= tol * abs(quotient):
            return EigenEstimate(value=quotient, iterations=iteration, converged=True)
        value = quotient

    log.warning(f"Power iteration did not converge <iters={iters}, tol={tol}, estimate={value:.6g}>")
    return EigenEstimate(value=value, iterations=iters, converged=False)


def hessian_report(
    model: MlpModel,
    inputs: torch.Tensor,
    targets: torch.Tensor,
    kind: LossKind | str = LossKind.CROSS_ENTROPY,
    probes: int = DEFAULT_PROBES,
    seed: int = 0,
    iters: int = 100,
    tol: float = 1e-6,
    scope: Scope | str = Scope.ALL,
    eps: float | None = None,
    with_nc1: bool = True,
) -> HessianReport:
    """Runs every sharpness diagnostic on one model snapshot.

    :param scope: Parameter block for the Hutchinson and eigenvalue estimates.
    :param with_nc1: Also measure within/between class scatter of the penultimate features.
    """
    operator = ModelHessian(model, inputs, targets, kind, scope, eps)
    trace = hutchinson_trace(operator, probes, seed)
    eigen = top_eigenvalue(operator, iters, tol, seed)

    nc1 = None
    if with_nc1 and not targets.is_floating_point():
        with torch.no_grad():
            features = model.features(inputs)
        try:
            nc1 = nc1_metric(features, targets)
        except DegenerateScatterError as ex:
            log.warning(f"Skipping NC1 <reason={ex}>")

    return HessianReport(
        exact_last_layer_trace=exact_last_layer_trace(model, inputs, targets, kind),
        hutchinson_trace=trace.estimate,
        hutchinson_stderr=trace.stderr,
        probes=trace.probes,
        top_eigenvalue=eigen.value,
        power_iters=eigen.iterations,
        eigen_converged=eigen.converged,
        scope=str(operator.scope),
        param_count=operator.dim,
        nc1=nc1,
    )
