from pathlib import Path
from typing import TextIO

import torch

from linalg.kernels import Matrix, as_matrix
from utils.errors import DataFormatError


def format_row(values: torch.Tensor) -> str:
    """Space-separated reals at 17 significant digits (round-trips a float64 exactly)."""
    return " ".join(format(float(x), ".17g") for x in values.tolist())


def parse_row(line: str) -> list[float]:
    return [float(token) for token in line.split()]


def dump_matrix(m: Matrix, stream: TextIO) -> None:
    rows, cols = m.shape
    stream.write(f"{rows} {cols}\n")
    for row in m:
        stream.write(format_row(row) + "\n")


def load_matrix(stream: TextIO, source: str = "<stream>") -> Matrix:
    header = stream.readline().split()
    if len(header) != 2:
        raise DataFormatError(source, 0, "expected header 'rows cols'")
    rows, cols = int(header[0]), int(header[1])

    data: list[list[float]] = []
    for index in range(rows):
        values = parse_row(stream.readline())
        if len(values) != cols:
            raise DataFormatError(source, index + 1, f"expected {cols} values, got {len(values)}")
        data.append(values)
    if rows == 0:
        return torch.zeros(0, cols, dtype=torch.float64)
    return as_matrix(data, name=source)


def write_matrix(path: str | Path, m: Matrix) -> None:
    with Path(path).open("w") as stream:
        dump_matrix(m, stream)


def read_matrix(path: str | Path) -> Matrix:
    with Path(path).open() as stream:
        return load_matrix(stream, str(path))
