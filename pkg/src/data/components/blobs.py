from dataclasses import dataclass
from pathlib import Path

import torch

from data.components.dataset import Dataset, Normalization, Split, assert_disjoint
from linalg.matrix_io import dump_matrix, load_matrix


@dataclass(frozen=True)
class BlobSpec:
    """Isotropic Gaussian blobs: class means on a sphere of radius `separation`."""

    classes: int = 10
    dim: int = 64
    separation: float = 4.0
    noise: float = 1.0
    train_size: int = 5000
    test_size: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.noise <= 0:
            raise ValueError(f"noise must be > 0, got {self.noise}")
        if self.separation < 0:
            raise ValueError(f"separation must be >= 0, got {self.separation}")
        if self.train_size < 1 or self.test_size < 1:
            raise ValueError(f"train_size and test_size must be >= 1, got {self.train_size} and {self.test_size}")


def class_means(spec: BlobSpec, generator: torch.Generator) -> torch.Tensor:
    directions = torch.randn(spec.classes, spec.dim, generator=generator, dtype=torch.float64)
    directions /= torch.linalg.vector_norm(directions, dim=1, keepdim=True)
    return spec.separation * directions


def generate_blobs(spec: BlobSpec) -> tuple[Dataset, Dataset]:
    """Samples a balanced train/test pair; a pure function of `spec`.

    :param spec: The blob parameters.
    :return: The train and test datasets.
    """
    generator = torch.Generator().manual_seed(spec.seed)
    means = class_means(spec, generator)

    total = spec.train_size + spec.test_size
    labels = torch.arange(total) % spec.classes
    labels = labels[torch.randperm(total, generator=generator)]
    noise = torch.randn(total, spec.dim, generator=generator, dtype=torch.float64)
    inputs = means[labels] + spec.noise * noise

    order = torch.randperm(total, generator=generator)
    normalization = Normalization.identity(spec.dim)

    def split(index: torch.Tensor, tag: Split) -> Dataset:
        return Dataset(inputs[index], labels[index], spec.classes, tag, normalization, indices=index)

    train = split(order[: spec.train_size], Split.TRAIN)
    test = split(order[spec.train_size :], Split.TEST)
    assert_disjoint(train, test)
    return train, test


def write_blobs(path: str | Path, dataset: Dataset) -> None:
    """Exports inputs in the matrix text format followed by one line of labels."""
    with Path(path).open("w") as stream:
        dump_matrix(dataset.inputs, stream)
        stream.write(" ".join(str(int(y)) for y in dataset.labels) + "\n")


def read_blobs(path: str | Path, class_count: int, split: Split = Split.TRAIN) -> Dataset:
    with Path(path).open() as stream:
        inputs = load_matrix(stream, str(path))
        labels = torch.tensor([int(t) for t in stream.readline().split()], dtype=torch.int64)
    return Dataset(inputs, labels, class_count, split, Normalization.identity(inputs.shape[1]))
