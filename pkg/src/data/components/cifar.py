from pathlib import Path

import numpy as np
import torch

from data.components.dataset import Dataset, Normalization, Split
from utils.errors import DataFormatError

CIFAR10_CLASSES = 10
CIFAR10_PIXELS = 3 * 32 * 32
CIFAR10_RECORD = 1 + CIFAR10_PIXELS
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2023, 0.1994, 0.2010)
CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"

TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)


def read_cifar10_batch(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Parses one binary batch: records of one label byte followed by 3072 pixel bytes.

    Pixels are channel-planar (1024 red, 1024 green, 1024 blue).

    :return: Pixels ``(records, 3072)`` and labels ``(records,)``, both uint8.
    """
    path = Path(path)
    raw = path.read_bytes()
    remainder = len(raw) % CIFAR10_RECORD
    if remainder:
        raise DataFormatError(
            str(path),
            len(raw) - remainder,
            f"record misalignment: length {len(raw)} is not a multiple of {CIFAR10_RECORD}",
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR10_RECORD)
    labels = records[:, 0]
    bad = np.flatnonzero(labels >= CIFAR10_CLASSES)
    if bad.size:
        raise DataFormatError(str(path), int(bad[0]) * CIFAR10_RECORD, f"label {int(labels[bad[0]])} outside 0-9")
    return records[:, 1:], labels


def channel_normalization() -> Normalization:
    per_channel = CIFAR10_PIXELS // 3
    mean = torch.tensor(CIFAR10_MEAN, dtype=torch.float64).repeat_interleave(per_channel)
    std = torch.tensor(CIFAR10_STD, dtype=torch.float64).repeat_interleave(per_channel)
    return Normalization(mean, std)


def _batch_dir(data_dir: Path) -> Path:
    nested = data_dir / "cifar-10-batches-bin"
    return nested if nested.is_dir() else data_dir


def _load_split(folder: Path, names: tuple[str, ...], split: Split, normalization: Normalization) -> Dataset:
    pixels, labels = zip(*(read_cifar10_batch(folder / name) for name in names), strict=True)
    inputs = torch.from_numpy(np.concatenate(pixels).astype(np.float64) / 255.0)
    targets = torch.from_numpy(np.concatenate(labels).astype(np.int64))
    return Dataset(normalization.apply(inputs), targets, CIFAR10_CLASSES, split, normalization)


def load_cifar10(data_dir: str | Path, download: bool = False) -> tuple[Dataset, Dataset]:
    """Loads CIFAR-10 from its binary batches as flattened 3072-feature vectors.

    :param data_dir: Folder with the ``.bin`` batches (or their ``cifar-10-batches-bin`` parent).
    :param download: Fetch and extract the binary archive first if it is missing.
    :return: The train (50k) and test (10k) datasets.
    """
    data_dir = Path(data_dir)
    if download and not (_batch_dir(data_dir) / TEST_FILES[0]).exists():
        from torchvision.datasets.utils import download_and_extract_archive

        download_and_extract_archive(CIFAR10_URL, download_root=str(data_dir))

    folder = _batch_dir(data_dir)
    normalization = channel_normalization()
    train = _load_split(folder, TRAIN_FILES, Split.TRAIN, normalization)
    test = _load_split(folder, TEST_FILES, Split.TEST, normalization)
    return train, test
