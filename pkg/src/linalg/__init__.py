from linalg.kernels import (
    DEFAULT_PIVOT_TOL,
    EliminationResult,
    Matrix,
    as_matrix,
    check_finite,
    frobenius_norm_sq,
    gaussian_eliminate,
    matmul,
    min_norm_oracle,
    spd_solve,
)
from linalg.matrix_io import read_matrix, write_matrix

__all__ = [
    "DEFAULT_PIVOT_TOL",
    "EliminationResult",
    "Matrix",
    "as_matrix",
    "check_finite",
    "frobenius_norm_sq",
    "gaussian_eliminate",
    "matmul",
    "min_norm_oracle",
    "read_matrix",
    "spd_solve",
    "write_matrix",
]
