import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import hydra
from omegaconf import DictConfig, OmegaConf

from data.classification_datamodule import ClassificationDataModule
from data.components.dataset import Dataset
from models.components.checkpoint import list_checkpoints, load_checkpoint, save_checkpoint
from models.components.losses import LossKind, evaluate
from shifting import OsConfig, OsReport, apply_os, sample_os_batch
from utils import (
    RankedLogger,
    exception_wrapper,
    process_extras,
    require_keys,
    run_task,
    save_config,
    write_manifest,
)

logger = RankedLogger(__name__)

LOSS_DIFFERENCE_FILE = "loss_difference.csv"
LOSS_DIFFERENCE_HEADER = (
    "epoch",
    "train_loss_before",
    "train_loss_after",
    "loss_difference",
    "test_acc_before",
    "test_acc_after",
    "norm_before",
    "norm_after",
)


@dataclass(frozen=True)
class OsApplication:
    """One checkpoint shifted once, with full-split losses and accuracies around it."""

    checkpoint: str
    epoch: int
    train_loss_before: float
    train_acc_before: float
    test_loss_before: float
    test_acc_before: float
    train_loss_after: float
    train_acc_after: float
    test_loss_after: float
    test_acc_after: float
    report: OsReport


def shift_checkpoint(
    path: Path, train: Dataset, test: Dataset, os_config: OsConfig, kind: LossKind, output_dir: Path
) -> OsApplication:
    model, meta = load_checkpoint(path)
    train_loss_before, train_acc_before = evaluate(model, train.inputs, train.labels, kind)
    test_loss_before, test_acc_before = evaluate(model, test.inputs, test.labels, kind)

    index = sample_os_batch(train.labels, os_config.batch_size, os_config.sampling, os_config.batch_seed(meta.epoch))
    report = apply_os(model, train.inputs[index], os_config, kind=kind, full_set=(train.inputs, train.labels))

    train_loss_after, train_acc_after = evaluate(model, train.inputs, train.labels, kind)
    test_loss_after, test_acc_after = evaluate(model, test.inputs, test.labels, kind)

    save_checkpoint(output_dir / "checkpoints" / f"{path.stem}_os.ckpt", model, meta.epoch, extra=asdict(report))
    return OsApplication(
        checkpoint=str(path),
        epoch=meta.epoch,
        train_loss_before=train_loss_before,
        train_acc_before=train_acc_before,
        test_loss_before=test_loss_before,
        test_acc_before=test_acc_before,
        train_loss_after=train_loss_after,
        train_acc_after=train_acc_after,
        test_loss_after=test_loss_after,
        test_acc_after=test_acc_after,
        report=report,
    )


def _write_loss_difference(path: Path, applications: list[OsApplication]) -> None:
    with path.open("w", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(LOSS_DIFFERENCE_HEADER)
        for app in applications:
            values = (
                app.train_loss_before,
                app.train_loss_after,
                app.train_loss_after - app.train_loss_before,
                app.test_acc_before,
                app.test_acc_after,
                app.report.norm_before,
                app.report.norm_after,
            )
            writer.writerow([app.epoch, *(repr(v) for v in values)])


@exception_wrapper
def os_apply(cfg: DictConfig) -> tuple[dict[str, Any], dict[str, Any]]:
    """Applies optimum shifting once to a trained checkpoint (or to each checkpoint of a directory).

    Writes the shifted checkpoints, ``os_reports.jsonl``, ``os_apply.json`` with
    before/after full-split loss and accuracy and, for a directory,
    ``loss_difference.csv`` with the train-loss change per epoch.

    :param cfg: DictConfig configuration composed by Hydra.
    :return: Tuple[dict, dict] with metrics and dict with all instantiated objects.
    """
    require_keys(cfg, ("checkpoint_path", "seed"))
    write_manifest(cfg)
    save_config(cfg)

    checkpoints = list_checkpoints(cfg.checkpoint_path)
    os_config = OsConfig.from_mapping(OmegaConf.to_container(cfg.sos, resolve=True))
    kind = LossKind(cfg.loss)

    logger.info(f"Instantiating datamodule <{cfg.data._target_}>")
    datamodule: ClassificationDataModule = hydra.utils.instantiate(cfg.data)
    datamodule.prepare_data()
    datamodule.setup()
    train, test = datamodule.data_train, datamodule.data_test
    assert train is not None and test is not None

    output_dir = Path(cfg.paths.output_dir)
    applications = []
    with (output_dir / "os_reports.jsonl").open("w") as reports:
        for path in checkpoints:
            app = shift_checkpoint(path, train, test, os_config, kind, output_dir)
            reports.write(app.report.to_json() + "\n")
            applications.append(app)
            logger.info(
                f"Shifted {path.name} <epoch={app.epoch}, norm_before={app.report.norm_before:.6g}, "
                f"norm_after={app.report.norm_after:.6g}, test_acc_before={app.test_acc_before:.4f}, "
                f"test_acc_after={app.test_acc_after:.4f}>"
            )

    (output_dir / "os_apply.json").write_text(json.dumps([asdict(app) for app in applications], indent=2))
    if len(applications) > 1:
        _write_loss_difference(output_dir / LOSS_DIFFERENCE_FILE, applications)

    last = applications[-1]
    metric_dict = {
        "train/loss_before": last.train_loss_before,
        "train/loss_after": last.train_loss_after,
        "test/acc_before": last.test_acc_before,
        "test/acc_after": last.test_acc_after,
        "norm_before": last.report.norm_before,
        "norm_after": last.report.norm_after,
    }
    return metric_dict, {"cfg": cfg, "applications": applications}


@hydra.main(version_base="1.3", config_path="../configs", config_name="os_apply.yaml")
def main(cfg: DictConfig) -> None:
    """Main entry point for applying optimum shifting to checkpoints.

    :param cfg: DictConfig configuration composed by Hydra.
    """
    process_extras(cfg)

    code, _ = run_task(os_apply, cfg)
    if code:
        raise SystemExit(code)


if __name__ == "__main__":
    main()
