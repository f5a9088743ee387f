"""MNIST reader for the big-endian IDX format.

Images::

    [offset] [type]          [value]
    0000     32 bit integer  0x00000803  magic number
    0004     32 bit integer  count
    0008     32 bit integer  rows
    0012     32 bit integer  columns
    0016     unsigned byte   pixels, row-wise

Labels::

    0000     32 bit integer  0x00000801  magic number
    0004     32 bit integer  count
    0008     unsigned byte   labels (0-9)
"""

import gzip
import struct
from pathlib import Path

import numpy as np
import torch

from data.components.dataset import Dataset, Normalization, Split
from utils.errors import DataFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_CLASSES = 10

MNIST_FILES = {
    Split.TRAIN: ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    Split.TEST: ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as file:
            return file.read()
    return path.read_bytes()


def _read_header(raw: bytes, path: Path, fields: int, magic: int) -> tuple[int, ...]:
    size = 4 * fields
    if len(raw) < size:
        raise DataFormatError(str(path), len(raw), f"truncated header: expected {size} bytes, got {len(raw)}")
    header = struct.unpack_from(f">{fields}I", raw, 0)
    if header[0] != magic:
        raise DataFormatError(str(path), 0, f"bad magic 0x{header[0]:08x}, expected 0x{magic:08x}")
    return header[1:]


def _check_length(raw: bytes, path: Path, expected: int) -> None:
    if len(raw) != expected:
        raise DataFormatError(
            str(path), min(len(raw), expected), f"expected {expected} bytes, got {len(raw)}"
        )


def read_idx_images(path: str | Path) -> np.ndarray:
    """Returns the pixels as a ``(count, rows * cols)`` uint8 array."""
    path = Path(path)
    raw = _read_bytes(path)
    count, rows, cols = _read_header(raw, path, 4, IDX_IMAGES_MAGIC)
    _check_length(raw, path, 16 + count * rows * cols)
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows * cols)


def read_idx_labels(path: str | Path, class_count: int = MNIST_CLASSES) -> np.ndarray:
    path = Path(path)
    raw = _read_bytes(path)
    (count,) = _read_header(raw, path, 2, IDX_LABELS_MAGIC)
    _check_length(raw, path, 8 + count)
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    bad = np.flatnonzero(labels >= class_count)
    if bad.size:
        raise DataFormatError(str(path), 8 + int(bad[0]), f"label {int(labels[bad[0]])} outside 0-{class_count - 1}")
    return labels


def _locate(data_dir: Path, name: str) -> Path:
    for folder in (data_dir, data_dir / "MNIST" / "raw"):
        for candidate in (folder / name, folder / f"{name}.gz"):
            if candidate.exists():
                return candidate
    raise FileNotFoundError(f"MNIST file {name} not found under {data_dir}")


def load_mnist(data_dir: str | Path, download: bool = False) -> tuple[Dataset, Dataset]:
    """Loads MNIST, scales pixels to [0, 1] and normalizes by the train-split mean/std.

    :param data_dir: Folder with the four IDX files (plain or ``.gz``), either
        directly or in the ``MNIST/raw`` layout.
    :param download: Fetch the raw files first if they are missing.
    :return: The train (60k) and test (10k) datasets.
    """
    data_dir = Path(data_dir)
    if download:
        from torchvision.datasets import MNIST

        MNIST(str(data_dir), train=True, download=True)
        MNIST(str(data_dir), train=False, download=True)

    pixels: dict[Split, torch.Tensor] = {}
    labels: dict[Split, torch.Tensor] = {}
    for split, (images_name, labels_name) in MNIST_FILES.items():
        images = read_idx_images(_locate(data_dir, images_name))
        targets = read_idx_labels(_locate(data_dir, labels_name))
        if len(images) != len(targets):
            raise DataFormatError(images_name, 4, f"{len(images)} images but {len(targets)} labels")
        pixels[split] = torch.from_numpy(images.astype(np.float64) / 255.0)
        labels[split] = torch.from_numpy(targets.astype(np.int64))

    features = pixels[Split.TRAIN].shape[1]
    normalization = Normalization.scalar(pixels[Split.TRAIN], features)
    train, test = (
        Dataset(
            normalization.apply(pixels[split]),
            labels[split],
            MNIST_CLASSES,
            split,
            normalization,
        )
        for split in (Split.TRAIN, Split.TEST)
    )
    return train, test
