"""Dense 64-bit linear-algebra kernels.

Every kernel takes and returns 2-D ``torch.float64`` tensors, never mutates its
inputs and uses a fixed operation order, so identical inputs give bit-identical
outputs.
"""

from dataclasses import dataclass
from typing import Any

import torch

from utils.errors import (
    InconsistentSystemError,
    NotPositiveDefiniteError,
    NumericalError,
    RankError,
    ShapeError,
)

type Matrix = torch.Tensor

DEFAULT_PIVOT_TOL = 1e-10
DEFAULT_CONSISTENCY_TOL = 1e-8
SYMMETRY_TOL = 1e-10


def check_finite(m: Matrix, name: str = "matrix") -> Matrix:
    if not bool(torch.isfinite(m).all()):
        raise NumericalError(f"Non-finite entries in {name} <shape={tuple(m.shape)}>")
    return m


def as_matrix(data: Any, name: str = "matrix") -> Matrix:
    """Converts array-like data into a finite, contiguous 2-D float64 tensor."""
    m = torch.as_tensor(data, dtype=torch.float64)
    if m.dim() != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {tuple(m.shape)}")
    return check_finite(m.contiguous(), name)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product accumulated left to right over the inner dimension.

    Entry ``(i, j)`` is ``((a[i,0]*b[0,j] + a[i,1]*b[1,j]) + ...)``, the same
    rounding sequence as a naive triple loop.
    """
    if a.dim() != 2 or b.dim() != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"Cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")

    out = torch.zeros(a.shape[0], b.shape[1], dtype=torch.float64)
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return check_finite(out, "matmul result")


def frobenius_norm_sq(m: Matrix) -> float:
    return float((m * m).sum())


@dataclass(frozen=True)
class EliminationResult:
    """Row-echelon reduction of an augmented system ``[lhs | rhs]``.

    `reduced_lhs` has `rank` linearly independent rows; the dropped rows were
    numerically zero in the lhs and consistent in the rhs.
    """

    reduced_lhs: Matrix
    reduced_rhs: Matrix
    rank: int
    pivot_cols: tuple[int, ...]
    dropped_rows: int


def gaussian_eliminate(
    lhs: Matrix,
    rhs: Matrix,
    pivot_tol: float = DEFAULT_PIVOT_TOL,
    consistency_tol: float = DEFAULT_CONSISTENCY_TOL,
) -> EliminationResult:
    """Forward elimination with partial pivoting on the augmented block ``[lhs | rhs]``.

    A column whose remaining entries are all at most ``pivot_tol * max|lhs|`` is
    skipped and those entries are cleared. Rows left without a pivot are dropped;
    their rhs residual must stay within ``consistency_tol * (1 + max|rhs|)``.

    :param lhs: System matrix, shape ``(rows, m)``.
    :param rhs: Right-hand sides, shape ``(rows, n)``.
    :param pivot_tol: Relative rank tolerance.
    :param consistency_tol: Relative tolerance on the rhs of dropped rows.
    :return: The reduced system and its rank.
    """
    if lhs.dim() != 2 or rhs.dim() != 2 or lhs.shape[0] != rhs.shape[0]:
        raise ShapeError(f"lhs {tuple(lhs.shape)} and rhs {tuple(rhs.shape)} row counts differ")
    if pivot_tol <= 0:
        raise ValueError(f"pivot_tol must be positive, got {pivot_tol}")

    rows, cols = lhs.shape
    block = torch.cat([lhs, rhs], dim=1).to(torch.float64).clone()
    scale = float(lhs.abs().max()) if lhs.numel() else 0.0
    threshold = pivot_tol * scale

    pivot_cols: list[int] = []
    rank = 0
    for col in range(cols):
        if rank == rows:
            break
        column = block[rank:, col].abs()
        offset = int(torch.argmax(column))
        if float(column[offset]) <= threshold:
            block[rank:, col] = 0.0
            continue

        pivot = rank + offset
        if pivot != rank:
            block[[rank, pivot]] = block[[pivot, rank]]

        factors = block[rank + 1 :, col] / block[rank, col]
        block[rank + 1 :] -= factors[:, None] * block[rank]
        block[rank + 1 :, col] = 0.0

        pivot_cols.append(col)
        rank += 1

    dropped = rows - rank
    if dropped:
        residual = float(block[rank:, cols:].abs().max()) if rhs.shape[1] else 0.0
        rhs_scale = float(rhs.abs().max()) if rhs.numel() else 0.0
        if residual > consistency_tol * (1.0 + rhs_scale):
            raise InconsistentSystemError(
                f"A·V = Z has no solution: dependent row keeps rhs residual {residual:.3e} "
                f"<rank={rank}, dropped_rows={dropped}>"
            )

    check_finite(block, "eliminated block")
    return EliminationResult(
        reduced_lhs=block[:rank, :cols].clone(),
        reduced_rhs=block[:rank, cols:].clone(),
        rank=rank,
        pivot_cols=tuple(pivot_cols),
        dropped_rows=dropped,
    )


def spd_solve(g: Matrix, b: Matrix) -> Matrix:
    """Solves ``g·X = b`` for symmetric positive definite ``g`` by Cholesky factorization."""
    if g.dim() != 2 or g.shape[0] != g.shape[1]:
        raise ShapeError(f"g must be square, got {tuple(g.shape)}")
    if b.dim() != 2 or b.shape[0] != g.shape[0]:
        raise ShapeError(f"b has {tuple(b.shape)}, expected {g.shape[0]} rows")

    g_scale = float(g.abs().max()) if g.numel() else 0.0
    asymmetry = float((g - g.T).abs().max()) if g.numel() else 0.0
    if asymmetry > SYMMETRY_TOL * g_scale:
        raise ShapeError(f"g is not symmetric <asymmetry={asymmetry:.3e}>")

    factor, info = torch.linalg.cholesky_ex(g)
    if int(info) != 0:
        raise NotPositiveDefiniteError(
            f"Cholesky met a non-positive pivot <leading_minor={int(info)}, size={g.shape[0]}>"
        )
    return check_finite(torch.cholesky_solve(b, factor), "spd_solve result")


def min_norm_oracle(a: Matrix, z: Matrix) -> Matrix:
    """Minimum-Frobenius-norm ``V`` with ``a·V = z`` via modified Gram-Schmidt.

    The rows of `a` are orthonormalised into ``Q`` with ``a = L·Q`` (``L`` lower
    triangular), then ``V = Qᵀ·L⁻¹·z``. Independent of the normal-equation path;
    meant for cross-checking it.
    """
    if a.shape[0] != z.shape[0]:
        raise ShapeError(f"a {tuple(a.shape)} and z {tuple(z.shape)} row counts differ")

    rows, cols = a.shape
    basis = torch.zeros(rows, cols, dtype=torch.float64)
    lower = torch.zeros(rows, rows, dtype=torch.float64)
    for i in range(rows):
        v = a[i].clone()
        for j in range(i):
            coeff = torch.dot(basis[j], v)
            lower[i, j] = coeff
            v -= coeff * basis[j]
        norm = torch.linalg.vector_norm(v)
        row_norm = float(torch.linalg.vector_norm(a[i]))
        if row_norm == 0.0 or float(norm) <= DEFAULT_PIVOT_TOL * row_norm:
            raise RankError(f"Row {i} of a is linearly dependent on the previous rows")
        lower[i, i] = norm
        basis[i] = v / norm

    coeffs = torch.linalg.solve_triangular(lower, z.to(torch.float64), upper=False)
    return basis.T @ coeffs
