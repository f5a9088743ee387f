from typing import Any

import hydra
import lightning as L
from lightning import Callback, LightningModule, Trainer
from lightning.pytorch.loggers import Logger
from omegaconf import DictConfig, OmegaConf

from data.classification_datamodule import ClassificationDataModule
from sharpness import HessianTraceMonitor
from shifting import OsConfig, StochasticOptimumShifting
from utils import (
    RankedLogger,
    exception_wrapper,
    get_metric_value,
    instantiate_callbacks,
    instantiate_exp_loggers,
    log_hyperparameters,
    process_extras,
    require_keys,
    run_task,
    save_config,
    write_manifest,
)
from utils.metrics_recorder import MetricsRecorder, TextCheckpoint

logger = RankedLogger(__name__)

REQUIRED_KEYS = ("epochs", "seed")


def build_run_callbacks(cfg: DictConfig) -> list[Callback]:
    """Callbacks every training run carries, in hook order.

    OS runs at epoch start; at epoch end the Hessian monitor runs before the
    metrics recorder so its trace lands in the same row.
    """
    output_dir = cfg.paths.output_dir
    callbacks: list[Callback] = []

    sos_cfg = cfg.get("sos")
    if sos_cfg is not None and sos_cfg.get("enabled"):
        os_config = OsConfig.from_mapping(OmegaConf.to_container(sos_cfg, resolve=True))
        logger.info(f"Enabling stochastic optimum shifting <batch_size={os_config.batch_size}, sampling={os_config.sampling}>")
        callbacks.append(
            StochasticOptimumShifting(
                os_config,
                output_dir=output_dir,
                loss_tolerance=sos_cfg.get("loss_tolerance", 1e-6),
                warmup_fraction=sos_cfg.get("warmup_fraction", 0.5),
            )
        )

    monitor_cfg = cfg.get("hessian_monitor")
    if monitor_cfg is not None and monitor_cfg.get("enabled"):
        callbacks.append(
            HessianTraceMonitor(
                output_dir=output_dir,
                every_n_epochs=monitor_cfg.every_n_epochs,
                probes=monitor_cfg.probes,
                samples=monitor_cfg.samples,
                seed=cfg.seed,
                scope=monitor_cfg.scope,
            )
        )

    callbacks.append(MetricsRecorder(output_dir=output_dir))

    checkpoint_cfg = cfg.get("checkpoint")
    if checkpoint_cfg is not None and checkpoint_cfg.get("enabled"):
        callbacks.append(
            TextCheckpoint(
                dirpath=f"{output_dir}/checkpoints",
                every_n_epochs=checkpoint_cfg.every_n_epochs,
                save_initial=checkpoint_cfg.get("save_initial", False),
            )
        )
    return callbacks


@exception_wrapper
def train(cfg: DictConfig) -> tuple[dict[str, Any], dict[str, Any]]:
    """Trains the MLP with SGD (or SAM), optionally interleaving stochastic optimum shifting.

    Writes ``manifest.json`` before anything else, then ``metrics.csv`` (one row per
    epoch), ``os_reports.jsonl`` when OS is enabled, ``hessian_trace.csv`` when the
    Hessian monitor is enabled and text checkpoints when configured.

    This method is wrapped in @exception_wrapper, which finalises the manifest
    whether the run succeeds or fails.

    :param cfg: A DictConfig configuration composed by Hydra.
    :return: A tuple with metrics and dict with all instantiated objects.
    """
    require_keys(cfg, REQUIRED_KEYS)
    write_manifest(cfg)

    # set seed for random number generators in pytorch, numpy and python.random
    L.seed_everything(cfg.seed, workers=True)

    logger.info(f"Saving config to {cfg.paths.config_path}")
    save_config(cfg)

    logger.info(f"Instantiating datamodule <{cfg.data._target_}>")
    datamodule: ClassificationDataModule = hydra.utils.instantiate(cfg.data)

    logger.info(f"Instantiating model <{cfg.model._target_}>")
    model: LightningModule = hydra.utils.instantiate(cfg.model)

    logger.info("Instantiating callbacks...")
    callbacks: list[Callback] = build_run_callbacks(cfg) + instantiate_callbacks(cfg.get("callbacks"))

    logger.info("Instantiating experiment loggers...")
    exp_loggers: list[Logger] = instantiate_exp_loggers(cfg.get("logger"))

    logger.info(f"Instantiating trainer <{cfg.trainer._target_}>")
    trainer: Trainer = hydra.utils.instantiate(cfg.trainer, callbacks=callbacks, logger=exp_loggers)

    object_dict = {
        "cfg": cfg,
        "datamodule": datamodule,
        "model": model,
        "callbacks": callbacks,
        "exp_loggers": exp_loggers,
        "trainer": trainer,
    }

    if exp_loggers:
        logger.info("Logging hyperparameters!")
        log_hyperparameters(object_dict)

    logger.info("Starting training!")
    trainer.fit(model=model, datamodule=datamodule)

    recorder = next(c for c in callbacks if isinstance(c, MetricsRecorder))
    object_dict["metrics_rows"] = recorder.rows

    metric_dict: dict[str, Any] = dict(trainer.callback_metrics)
    if recorder.rows:
        last = recorder.rows[-1]
        metric_dict |= {"test/acc": last.test_acc, "test/loss": last.test_loss, "v_frob_norm": last.v_frob_norm}
    return metric_dict, object_dict


@hydra.main(version_base="1.3", config_path="../configs", config_name="train.yaml")
def main(cfg: DictConfig) -> float | None:
    """Main entry point for training.

    :param cfg: DictConfig configuration composed by Hydra.
    :return: Optional[float] with optimized metric value.
    """
    # apply extra utilities
    # (e.g. disable warnings, quiet mode)
    process_extras(cfg)

    code, metric_dict = run_task(train, cfg)
    if code:
        raise SystemExit(code)

    # safely retrieve metric value for hydra-based hyperparameter optimization
    metric_name = cfg.get("optimized_metric")
    if metric_name is None:
        return None

    return get_metric_value(metric_dict, metric_name)


if __name__ == "__main__":
    main()
