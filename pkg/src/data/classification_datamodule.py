from typing import Any

import torch
from lightning import LightningDataModule
from lightning.fabric.utilities import AttributeDict
from torch.utils.data import DataLoader

from data.components.blobs import BlobSpec, generate_blobs
from data.components.cifar import load_cifar10
from data.components.dataset import Dataset, assert_disjoint
from data.components.idx import load_mnist
from utils.ranked_logger import RankedLogger

logger = RankedLogger(__name__)

SOURCES = ("blobs", "mnist", "cifar10")


class ClassificationDataModule(LightningDataModule):
    """`LightningDataModule` over flattened classification data kept as float64 tensors.

    Three sources are supported:
        - ``blobs``: seeded Gaussian blobs described by a `BlobSpec`
        - ``mnist``: the IDX files, normalized by the train mean/std
        - ``cifar10``: the binary batches, normalized per channel

    There is no separate validation split: the test split doubles as the
    per-epoch evaluation set, so every epoch reports test loss and accuracy.
    """

    def __init__(
        self,
        source: str = "blobs",
        data_dir: str = "data/",
        blobs: BlobSpec | None = None,
        batch_size: int = 64,
        eval_batch_size: int = 1024,
        train_subset: int | None = None,
        download: bool = False,
        num_workers: int = 0,
        persistent_workers: bool = False,
        pin_memory: bool = False,
    ) -> None:
        """Initialize a `ClassificationDataModule`.

        :param source: One of ``"blobs"``, ``"mnist"``, ``"cifar10"``.
        :param data_dir: The data directory for file-backed sources.
        :param blobs: Blob parameters, used when ``source == "blobs"``.
        :param batch_size: SGD batch size b₁.
        :param eval_batch_size: Batch size of the evaluation loader.
        :param train_subset: Keep only the first N training samples (desk-scale runs).
        :param download: Fetch raw MNIST/CIFAR-10 files if missing.
        :param num_workers: The number of loader workers.
        :param pin_memory: Whether to pin memory.
        """
        super().__init__()
        if source not in SOURCES:
            raise ValueError(f"Unknown data source <{source}>, expected one of {SOURCES}")

        # this line allows to access init params with 'self.hparams' attribute
        self.save_hyperparameters(logger=False)

        assert isinstance(self.hparams, AttributeDict)
        self.hparams: AttributeDict

        self.data_train: Dataset | None = None
        self.data_test: Dataset | None = None

    @property
    def num_classes(self) -> int:
        if self.data_train is not None:
            return self.data_train.class_count
        if self.hparams.source == "blobs":
            return (self.hparams.blobs or BlobSpec()).classes
        return 10

    @property
    def input_dim(self) -> int:
        self.setup()
        assert self.data_train is not None
        return self.data_train.feature_dim

    def prepare_data(self) -> None:
        """Download raw files if requested. Blobs need no preparation."""
        if not self.hparams.download:
            return
        if self.hparams.source == "mnist":
            load_mnist(self.hparams.data_dir, download=True)
        elif self.hparams.source == "cifar10":
            load_cifar10(self.hparams.data_dir, download=True)

    def setup(self, stage: str | None = None) -> None:
        """Load data. Set variables: `self.data_train`, `self.data_test`.

        :param stage: The stage to setup. Either `"fit"`, `"validate"`, `"test"`, or `"predict"`.
        """
        if self.data_train is not None and self.data_test is not None:
            return

        source = self.hparams.source
        if source == "blobs":
            train, test = generate_blobs(self.hparams.blobs or BlobSpec())
        elif source == "mnist":
            train, test = load_mnist(self.hparams.data_dir)
        else:
            train, test = load_cifar10(self.hparams.data_dir)

        subset = self.hparams.train_subset
        if subset is not None and subset < len(train):
            train = train.subset(torch.arange(subset))

        assert_disjoint(train, test)
        self.data_train, self.data_test = train, test
        logger.info(f"Loaded <{source}> <train={len(train)}, test={len(test)}, features={train.feature_dim}>")

    def _create_dataloader(
        self, dataset: Dataset | None, batch_size: int, shuffle: bool
    ) -> DataLoader[Any]:
        if dataset is None:
            raise ValueError("dataset is None, call setup() first")

        persistent_workers = (
            self.hparams.persistent_workers if self.hparams.num_workers > 0 else False
        )
        return DataLoader(
            dataset=dataset.tensor_dataset(),
            batch_size=batch_size,
            num_workers=self.hparams.num_workers,
            pin_memory=self.hparams.pin_memory,
            shuffle=shuffle,
            persistent_workers=persistent_workers,
        )

    def train_dataloader(self) -> DataLoader[Any]:
        return self._create_dataloader(self.data_train, self.hparams.batch_size, shuffle=True)

    def val_dataloader(self) -> DataLoader[Any]:
        return self.test_dataloader()

    def test_dataloader(self) -> DataLoader[Any]:
        return self._create_dataloader(self.data_test, self.hparams.eval_batch_size, shuffle=False)


if __name__ == "__main__":
    _ = ClassificationDataModule()
