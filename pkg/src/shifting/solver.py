"""Optimum shifting of the final linear layer.

Given the penultimate activations ``A`` of a batch and the current final weight
``V``, the products ``Z = A·V`` fix a linear system ``A·V = Z`` that every weight
with the same outputs on that batch satisfies. Optimum shifting replaces ``V``
with the minimum-Frobenius-norm solution ``V* = A*ᵀ(A*A*ᵀ)⁻¹Z*`` of the
row-reduced system. The bias is not part of the system and stays fixed, so the
batch logits are preserved for any loss.
"""

import json
import time
from collections.abc import Mapping
from dataclasses import asdict, dataclass, fields
from typing import Any

import torch

from linalg.kernels import (
    DEFAULT_PIVOT_TOL,
    EliminationResult,
    Matrix,
    check_finite,
    gaussian_eliminate,
    matmul,
    spd_solve,
)
from models.components.losses import LossKind, compute_loss
from models.components.mlp import MlpModel
from shifting.sampling import Sampling
from utils.errors import NotPositiveDefiniteError, OsContractViolation, ShapeError, SolverError
from utils.ranked_logger import RankedLogger

log = RankedLogger(__name__)

NORM_SLACK = 1e-9
BATCH_SEED_STRIDE = 1_000_003


@dataclass(frozen=True)
class OsConfig:
    """Settings of one (stochastic) optimum shifting schedule.

    `every_n_epochs` and `start_epoch` only matter during training; a single
    application ignores them.
    """

    batch_size: int = 32
    pivot_tol: float = DEFAULT_PIVOT_TOL
    sampling: Sampling = Sampling.UNIFORM
    seed: int = 0
    max_logit_drift: float = 1e-6
    every_n_epochs: int = 1
    start_epoch: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "sampling", Sampling(self.sampling))
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pivot_tol <= 0:
            raise ValueError(f"pivot_tol must be positive, got {self.pivot_tol}")
        if self.max_logit_drift <= 0:
            raise ValueError(f"max_logit_drift must be positive, got {self.max_logit_drift}")
        if self.every_n_epochs < 1 or self.start_epoch < 0:
            raise ValueError("every_n_epochs must be >= 1 and start_epoch >= 0")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "OsConfig":
        """Builds a config from a mapping, ignoring keys that are not fields (e.g. `enabled`)."""
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})

    def batch_seed(self, epoch: int) -> int:
        return self.seed * BATCH_SEED_STRIDE + epoch

    def applies_at(self, epoch: int) -> bool:
        return epoch >= self.start_epoch and (epoch - self.start_epoch) % self.every_n_epochs == 0


@dataclass(frozen=True)
class OsReport:
    """Before/after record of one OS application.

    Losses are on the full evaluation set when one was given, otherwise on the
    OS batch; they are ``None`` when no targets were available.
    """

    norm_before: float
    norm_after: float
    rank: int
    batch_rows: int
    logit_drift: float
    loss_before: float | None
    loss_after: float | None
    elapsed_ms: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @property
    def loss_change(self) -> float | None:
        if self.loss_before is None or self.loss_after is None:
            return None
        return self.loss_after - self.loss_before


def extract_system(model: MlpModel, batch_inputs: torch.Tensor) -> tuple[Matrix, Matrix]:
    """Builds ``(A, Z)`` for a batch: penultimate activations and their pre-bias products.

    :param model: The network whose final weight is ``V``.
    :param batch_inputs: The OS batch, one sample per row.
    :return: ``A`` of shape ``(b₂, m)`` and ``Z = A·V`` of shape ``(b₂, n)``.
    """
    with torch.no_grad():
        a = model.features(batch_inputs).detach().clone()
        z = a @ model.final_weight.detach()
    return a, z


def _solve_reduced(elimination: EliminationResult, feature_dim: int, outputs: int, pivot_tol: float) -> Matrix:
    if elimination.rank == 0:
        return torch.zeros(feature_dim, outputs, dtype=torch.float64)

    a_star = elimination.reduced_lhs
    gram = matmul(a_star, a_star.T)
    try:
        coeffs = spd_solve(gram, elimination.reduced_rhs)
    except NotPositiveDefiniteError as ex:
        raise SolverError(
            f"A*A*ᵀ is not positive definite after elimination, increase pivot_tol "
            f"<pivot_tol={pivot_tol}, rank={elimination.rank}>"
        ) from ex
    return matmul(a_star.T, coeffs)


def solve_min_norm(a: Matrix, z: Matrix, pivot_tol: float = DEFAULT_PIVOT_TOL) -> Matrix:
    """Minimum-Frobenius-norm solution of ``a·V = z``.

    The augmented block ``[a | z]`` is eliminated once, which equals eliminating
    every column system separately because the row operations only depend on
    ``a``. An all-zero ``a`` yields ``V* = 0``.

    :param a: System matrix, shape ``(rows, m)``.
    :param z: Right-hand sides, shape ``(rows, n)``.
    :param pivot_tol: Relative rank tolerance of the elimination.
    :return: ``V*`` of shape ``(m, n)``.
    """
    check_finite(a, "A")
    check_finite(z, "Z")
    elimination = gaussian_eliminate(a, z, pivot_tol)
    return _solve_reduced(elimination, a.shape[1], z.shape[1], pivot_tol)


def solve_min_norm_columnwise(a: Matrix, z: Matrix, pivot_tol: float = DEFAULT_PIVOT_TOL) -> Matrix:
    """Same solution as `solve_min_norm`, eliminating ``[a | z_i]`` for each column ``i``."""
    check_finite(a, "A")
    check_finite(z, "Z")
    columns = [
        _solve_reduced(gaussian_eliminate(a, z[:, i : i + 1], pivot_tol), a.shape[1], 1, pivot_tol)
        for i in range(z.shape[1])
    ]
    if not columns:
        return torch.zeros(a.shape[1], 0, dtype=torch.float64)
    return torch.cat(columns, dim=1)


def _mean_loss(
    model: MlpModel, inputs: torch.Tensor, targets: torch.Tensor | None, kind: LossKind
) -> float | None:
    if targets is None:
        return None
    with torch.no_grad():
        return float(compute_loss(model(inputs), targets, kind))


def apply_os(
    model: MlpModel,
    batch_inputs: torch.Tensor,
    cfg: OsConfig,
    batch_targets: torch.Tensor | None = None,
    kind: LossKind | str = LossKind.CROSS_ENTROPY,
    full_set: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> OsReport:
    """Replaces the final weight with the minimum-norm weight that keeps the batch outputs.

    The new weight is validated before it is written: the Frobenius norm must
    not grow and the batch products may drift by at most
    ``cfg.max_logit_drift · (1 + max|Z|)``.
    On a violation the model is left untouched and `OsContractViolation` is raised.

    :param model: The network to shift in place.
    :param batch_inputs: The OS batch.
    :param cfg: OS settings.
    :param batch_targets: Optional batch targets for the loss columns of the report.
    :param kind: The loss used for the report.
    :param full_set: Optional ``(inputs, targets)`` on which to report the loss instead.
    :return: The report of this application.
    """
    start = time.perf_counter()
    kind = LossKind(kind)
    rows = batch_inputs.shape[0]
    m, n = model.feature_dim, model.class_count
    if rows == 0:
        raise ShapeError("OS batch is empty")

    context = log.bind(batch_rows=rows, feature_dim=m)
    if rows >= m:
        context.warning("OS batch has at least as many rows as features, expect V unchanged (identity regime)")
    if rows < n:
        context.warning(f"OS batch is smaller than the class count <classes={n}>")

    loss_inputs, loss_targets = full_set if full_set is not None else (batch_inputs, batch_targets)
    loss_before = _mean_loss(model, loss_inputs, loss_targets, kind)

    a, z = extract_system(model, batch_inputs)
    elimination = gaussian_eliminate(a, z, cfg.pivot_tol)
    v_star = _solve_reduced(elimination, m, n, cfg.pivot_tol)

    weight = model.final_weight
    norm_before = float(torch.linalg.matrix_norm(weight.detach()))
    norm_after = float(torch.linalg.matrix_norm(v_star))
    drift = float((a @ v_star - z).abs().max())
    drift_bound = cfg.max_logit_drift * (1.0 + float(z.abs().max()))

    if norm_after > norm_before + NORM_SLACK * (1.0 + norm_before):
        raise OsContractViolation(f"OS increased ‖V‖_F <norm_before={norm_before!r}, norm_after={norm_after!r}>")
    if drift > drift_bound:
        raise OsContractViolation(
            f"OS moved the batch logits <logit_drift={drift:.3e}, bound={drift_bound:.3e}, "
            f"max_logit_drift={cfg.max_logit_drift}>"
        )

    with torch.no_grad():
        weight.copy_(v_star)

    loss_after = _mean_loss(model, loss_inputs, loss_targets, kind)
    report = OsReport(
        norm_before=norm_before,
        norm_after=norm_after,
        rank=elimination.rank,
        batch_rows=rows,
        logit_drift=drift,
        loss_before=loss_before,
        loss_after=loss_after,
        elapsed_ms=(time.perf_counter() - start) * 1e3,
    )
    context.debug(f"Applied OS <rank={report.rank}, norm_before={norm_before:.6g}, norm_after={norm_after:.6g}>")
    return report
