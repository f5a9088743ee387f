import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch

from linalg.matrix_io import format_row, parse_row
from models.components.mlp import MlpModel
from utils.errors import DataFormatError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CheckpointMeta:
    seed: int
    epoch: int
    extra: dict[str, Any]


def save_checkpoint(
    path: str | Path, model: MlpModel, epoch: int, extra: dict[str, Any] | None = None
) -> Path:
    """Writes the model as a JSON document with 17-significant-digit arrays.

    Each weight row and each bias is stored as a space-separated string, so a
    read back is bit-exact.

    :param path: Target file, usually ``checkpoints/epoch_N.ckpt``.
    :param model: The model to save.
    :param epoch: Epoch index recorded in the document.
    :param extra: Optional metadata (e.g. the last OS report).
    :return: The written path.
    """
    document = {
        "schema_version": SCHEMA_VERSION,
        "layer_dims": list(model.layer_dims),
        "seed": model.seed,
        "epoch": epoch,
        "extra": extra or {},
        "layers": [
            {"weight": [format_row(row) for row in weight.detach()], "bias": format_row(bias.detach())}
            for weight, bias in zip(model.weights, model.biases, strict=True)
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=1))
    return path


def load_checkpoint(path: str | Path) -> tuple[MlpModel, CheckpointMeta]:
    """Reads a checkpoint written by `save_checkpoint`.

    :param path: The checkpoint file.
    :return: The restored model and its metadata.
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as ex:
        raise DataFormatError(str(path), ex.pos, f"not a JSON checkpoint: {ex.msg}") from ex

    if document.get("schema_version") != SCHEMA_VERSION:
        raise DataFormatError(str(path), 0, f"unsupported schema_version {document.get('schema_version')}")

    model = MlpModel(document["layer_dims"], seed=int(document["seed"]))
    layers = document["layers"]
    if len(layers) != len(model.weights):
        raise DataFormatError(str(path), 0, f"expected {len(model.weights)} layers, got {len(layers)}")

    with torch.no_grad():
        for index, layer in enumerate(layers):
            weight = torch.tensor([parse_row(row) for row in layer["weight"]], dtype=torch.float64)
            bias = torch.tensor(parse_row(layer["bias"]), dtype=torch.float64)
            if weight.shape != model.weights[index].shape or bias.shape != model.biases[index].shape:
                raise DataFormatError(str(path), 0, f"layer {index} shape does not match layer_dims")
            model.weights[index].copy_(weight)
            model.biases[index].copy_(bias)

    meta = CheckpointMeta(seed=int(document["seed"]), epoch=int(document["epoch"]), extra=document.get("extra", {}))
    return model, meta


def _epoch_key(path: Path) -> tuple[int, str]:
    match = re.search(r"(\d+)", path.stem)
    return (int(match.group(1)) if match else -1, path.name)


def list_checkpoints(path: str | Path) -> list[Path]:
    """A single checkpoint, or every ``*.ckpt`` in a directory ordered by epoch."""
    path = Path(path)
    if path.is_dir():
        found = sorted(path.glob("*.ckpt"), key=_epoch_key)
        if not found:
            raise FileNotFoundError(f"No *.ckpt files in {path}")
        return found
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    return [path]
