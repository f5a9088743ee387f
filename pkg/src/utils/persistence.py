import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

import rich
import rich.syntax
import rich.tree
from lightning import LightningModule, Trainer
from lightning_utilities.core.rank_zero import rank_zero_only
from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import InterpolationToMissingValueError
from rich.console import Console

from utils.ranked_logger import RankedLogger

logger = RankedLogger(__name__)

MANIFEST_NAME = "manifest.json"
ARTIFACT_NAMES = (
    "metrics.csv",
    "os_reports.jsonl",
    "hessian.json",
    "hessian_trace.csv",
    "loss_difference.csv",
    "sos_batch_sweep.csv",
    "scheme_comparison.csv",
    "os_scaling.csv",
    "os_apply.json",
)


@dataclass
class RunManifest:
    """Provenance record written before any compute and finalised after the task."""

    command: str
    config: dict[str, Any]
    config_hash: str
    seed: int | None
    start_time: str
    output_dir: str
    status: str = "running"
    end_time: str | None = None
    artifacts: dict[str, str] = field(default_factory=dict)


def _create_config_tree(cfg: DictConfig) -> rich.tree.Tree:
    tree = rich.tree.Tree("CONFIG")
    for field_name in cfg:
        field_str = str(field_name)
        branch = tree.add(field_str)
        config_group = cfg[field_name]

        if isinstance(config_group, DictConfig):
            try:
                branch_content = OmegaConf.to_yaml(config_group, resolve=True)
            except InterpolationToMissingValueError:
                branch_content = OmegaConf.to_yaml(config_group, resolve=False)
        else:
            branch_content = str(config_group)
        branch.add(rich.syntax.Syntax(branch_content, "yaml"))
    return tree


def _resolved_container(cfg: DictConfig) -> dict[str, Any]:
    task_cfg = OmegaConf.masked_copy(cfg, [k for k in cfg if k != "hydra"])
    container = OmegaConf.to_container(task_cfg, resolve=True)
    assert isinstance(container, dict)
    return {str(k): v for k, v in container.items()}


def config_hash(cfg: DictConfig) -> str:
    """Content hash of the resolved task config (hydra internals excluded).

    Output paths are part of the config, so two runs only share a hash when they
    also share their output directory.
    """
    payload = json.dumps(_resolved_container(cfg), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as file:
        for chunk in iter(lambda: file.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@rank_zero_only
def save_config(cfg: DictConfig) -> None:
    """Prints the config tree to console and saves it to a log file.

    :param cfg: A DictConfig composed by Hydra.
    """
    tree = _create_config_tree(cfg)

    # Print to console
    if cfg.extras.get("print_config"):
        rich.print(tree)

    # Save to file
    output_file = Path(cfg.paths.config_path)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    with output_file.open("w") as file:
        console = Console(file=file, width=120)
        console.print(tree)


@rank_zero_only
def write_manifest(cfg: DictConfig) -> None:
    """Writes `manifest.json` into the output dir. Must run before any compute.

    :param cfg: A DictConfig composed by Hydra.
    """
    output_dir = Path(cfg.paths.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    manifest = RunManifest(
        command=str(cfg.get("task_name", Path(sys.argv[0]).stem)),
        config=_resolved_container(cfg),
        config_hash=config_hash(cfg),
        seed=cfg.get("seed"),
        start_time=datetime.now(UTC).isoformat(),
        output_dir=str(output_dir),
    )
    path = output_dir / MANIFEST_NAME
    path.write_text(json.dumps(asdict(manifest), indent=2, default=str))
    logger.info(f"Saved run manifest to {path}")


@rank_zero_only
def finalize_manifest(cfg: DictConfig, status: str) -> None:
    """Records the final status and the content hash of every produced artifact.

    :param cfg: A DictConfig composed by Hydra.
    :param status: ``"completed"`` or ``"failed"``.
    """
    output_dir = Path(cfg.paths.output_dir)
    path = output_dir / MANIFEST_NAME
    if not path.exists():
        logger.warning("No manifest found! Skipping finalisation...")
        return

    manifest = json.loads(path.read_text())
    manifest["status"] = status
    manifest["end_time"] = datetime.now(UTC).isoformat()
    artifacts = {name: file_sha256(output_dir / name) for name in ARTIFACT_NAMES if (output_dir / name).exists()}
    checkpoint_dir = output_dir / "checkpoints"
    if checkpoint_dir.is_dir():
        for ckpt in sorted(checkpoint_dir.glob("*.ckpt")):
            artifacts[f"checkpoints/{ckpt.name}"] = file_sha256(ckpt)
    manifest["artifacts"] = artifacts
    path.write_text(json.dumps(manifest, indent=2, default=str))


@rank_zero_only
def log_hyperparameters(object_dict: dict[str, Any]) -> None:
    """Controls which config parts are saved by Lightning loggers.

    Additionally saves:
        - Number of model parameters (total, final layer)

    :param object_dict: A dictionary containing the following objects:
        - `"cfg"`: A DictConfig object containing the main config.
        - `"model"`: The Lightning model.
        - `"trainer"`: The Lightning trainer.
    """
    required_keys = {"cfg", "model", "trainer"}
    missing_keys = required_keys - object_dict.keys()
    if missing_keys:
        logger.error(f"Missing required keys in object_dict: {missing_keys}")
        return

    trainer: Trainer = object_dict["trainer"]
    if not trainer.loggers:
        logger.warning("No experiment loggers found. Skipping hyperparameter logging.")
        return

    model = object_dict["model"]
    assert isinstance(model, LightningModule)

    hparams = _resolved_container(object_dict["cfg"])
    hparams["model/params/total"] = sum(p.numel() for p in model.parameters())
    hparams["model/params/final_layer"] = model.net.final_weight.numel()

    logger.info(f"Logging hyperparameters to {len(trainer.loggers)} logger(s)")
    for exp_logger in trainer.loggers:
        exp_logger.log_hyperparams(hparams)
