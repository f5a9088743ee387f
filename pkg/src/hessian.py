import csv
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any

import hydra
import torch
from omegaconf import DictConfig

from data.classification_datamodule import ClassificationDataModule
from models.components.checkpoint import list_checkpoints, load_checkpoint
from models.components.losses import LossKind
from sharpness import HessianReport, hessian_report
from sharpness.callback import TRACE_FILE, TRACE_HEADER
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


@exception_wrapper
def hessian(cfg: DictConfig) -> tuple[dict[str, Any], dict[str, Any]]:
    """Measures sharpness of a checkpoint (or of every checkpoint in a directory).

    Writes ``hessian.json`` with one report per checkpoint and, for a directory,
    the ``hessian_trace.csv`` series.

    :param cfg: DictConfig configuration composed by Hydra.
    :return: Tuple[dict, dict] with metrics and dict with all instantiated objects.
    """
    require_keys(cfg, ("checkpoint_path", "seed", "hessian.probes"))
    write_manifest(cfg)
    save_config(cfg)

    checkpoints = list_checkpoints(cfg.checkpoint_path)
    kind = LossKind(cfg.loss)
    settings = cfg.hessian

    logger.info(f"Instantiating datamodule <{cfg.data._target_}>")
    datamodule: ClassificationDataModule = hydra.utils.instantiate(cfg.data)
    datamodule.prepare_data()
    datamodule.setup()
    dataset = datamodule.data_train if settings.split == "train" else datamodule.data_test
    assert dataset is not None
    if settings.get("samples") is not None:
        dataset = dataset.subset(torch.arange(min(settings.samples, len(dataset))))

    reports: list[tuple[int, HessianReport]] = []
    for path in checkpoints:
        model, meta = load_checkpoint(path)
        report = hessian_report(
            model,
            dataset.inputs,
            dataset.labels,
            kind,
            probes=settings.probes,
            seed=cfg.seed,
            iters=settings.iters,
            tol=settings.tol,
            scope=settings.scope,
            eps=settings.get("eps"),
        )
        reports.append((meta.epoch, report))
        logger.info(
            f"Hessian of {path.name} <trace={report.hutchinson_trace:.6g}, stderr={report.hutchinson_stderr:.3g}, "
            f"exact_last_layer={report.exact_last_layer_trace:.6g}, top_eigenvalue={report.top_eigenvalue:.6g}>"
        )

    output_dir = Path(cfg.paths.output_dir)
    payload = [{"checkpoint": str(p), "epoch": e, **asdict(r)} for p, (e, r) in zip(checkpoints, reports, strict=True)]
    (output_dir / "hessian.json").write_text(json.dumps(payload[0] if len(payload) == 1 else payload, indent=2))

    if len(reports) > 1:
        with (output_dir / TRACE_FILE).open("w", newline="") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(TRACE_HEADER)
            for epoch, report in reports:
                writer.writerow(
                    [epoch, repr(report.hutchinson_trace), repr(report.hutchinson_stderr), repr(report.exact_last_layer_trace)]
                )

    _, last = reports[-1]
    metric_dict = {
        "hessian/trace": last.hutchinson_trace,
        "hessian/stderr": last.hutchinson_stderr,
        "hessian/exact_last_layer_trace": last.exact_last_layer_trace,
        "hessian/top_eigenvalue": last.top_eigenvalue,
    }
    return metric_dict, {"cfg": cfg, "reports": reports}


@hydra.main(version_base="1.3", config_path="../configs", config_name="hessian.yaml")
def main(cfg: DictConfig) -> None:
    """Main entry point for Hessian diagnostics.

    :param cfg: DictConfig configuration composed by Hydra.
    """
    process_extras(cfg)

    code, _ = run_task(hessian, cfg)
    if code:
        raise SystemExit(code)


if __name__ == "__main__":
    main()
