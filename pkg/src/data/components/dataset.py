from dataclasses import dataclass
from enum import StrEnum

import torch
from torch.utils.data import TensorDataset


class Split(StrEnum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class Normalization:
    """Affine input normalization ``(x − mean) / std``, broadcast over features."""

    mean: torch.Tensor
    std: torch.Tensor

    @classmethod
    def identity(cls, features: int) -> "Normalization":
        return cls(torch.zeros(features, dtype=torch.float64), torch.ones(features, dtype=torch.float64))

    @classmethod
    def scalar(cls, values: torch.Tensor, features: int) -> "Normalization":
        """One mean/std over every entry of `values`, repeated per feature."""
        mean = values.mean()
        std = values.std()
        return cls(mean.expand(features).clone(), std.expand(features).clone())

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.mean) / self.std

    def invert(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.std + self.mean


@dataclass(frozen=True)
class Dataset:
    """An immutable classification split: normalized float64 inputs and integer labels.

    `indices` are the sample positions in the source collection; train and test
    index sets of one source never intersect.
    """

    inputs: torch.Tensor
    labels: torch.Tensor
    class_count: int
    split: Split
    normalization: Normalization
    indices: torch.Tensor | None = None

    def __post_init__(self) -> None:
        if self.inputs.dim() != 2:
            raise ValueError(f"inputs must be (samples, features), got {tuple(self.inputs.shape)}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError(f"Expected {self.inputs.shape[0]} labels, got {tuple(self.labels.shape)}")
        if self.class_count < 2:
            raise ValueError(f"Need at least 2 classes, got {self.class_count}")
        if len(self) and (int(self.labels.min()) < 0 or int(self.labels.max()) >= self.class_count):
            raise ValueError(f"Labels must lie in [0, {self.class_count})")
        if not bool(torch.isfinite(self.inputs).all()):
            raise ValueError("inputs contain non-finite values")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, index: torch.Tensor) -> "Dataset":
        return Dataset(
            inputs=self.inputs[index],
            labels=self.labels[index],
            class_count=self.class_count,
            split=self.split,
            normalization=self.normalization,
            indices=None if self.indices is None else self.indices[index],
        )

    def denormalized(self) -> torch.Tensor:
        return self.normalization.invert(self.inputs)

    def tensor_dataset(self) -> TensorDataset:
        return TensorDataset(self.inputs, self.labels)


def assert_disjoint(train: Dataset, test: Dataset) -> None:
    """Raises if the two splits share a source sample."""
    if train.indices is None or test.indices is None:
        return
    shared = torch.isin(train.indices, test.indices)
    if bool(shared.any()):
        raise AssertionError(f"Train/test leakage: {int(shared.sum())} shared samples")
