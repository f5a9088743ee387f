from typing import Any

import hydra
from lightning import Callback
from lightning.pytorch.loggers import Logger
from omegaconf import DictConfig

from utils.ranked_logger import RankedLogger

logger = RankedLogger(__name__)


def _instantiate_group(group_cfg: DictConfig | None, kind: str) -> list[Any]:
    """Instantiates every `_target_` entry of a config group, skipping disabled ones.

    An entry can be switched off from the command line with ``<group>.<name>=null``.
    """
    objects: list[Any] = []

    if not group_cfg:
        logger.warning(f"No {kind} configs found! Skipping...")
        return objects

    for name, conf in group_cfg.items():
        if isinstance(conf, DictConfig) and "_target_" in conf:
            logger.info(f"Instantiating {kind} <{conf._target_}> <name={name}>")
            objects.append(hydra.utils.instantiate(conf))

    return objects


def instantiate_callbacks(callbacks_cfg: DictConfig | None) -> list[Callback]:
    """Instantiates callbacks from config.

    :param callbacks_cfg: A DictConfig object containing callback configurations.
    :return: A list of instantiated callbacks.
    """
    callbacks = _instantiate_group(callbacks_cfg, "callback")
    for callback in callbacks:
        if not isinstance(callback, Callback):
            raise TypeError(f"Expected a lightning Callback, got {type(callback).__name__}")
    return callbacks


def instantiate_exp_loggers(logger_cfg: DictConfig | None) -> list[Logger]:
    """Instantiates experiment loggers from config.

    :param logger_cfg: A DictConfig object containing logger configurations.
    :return: A list of instantiated loggers.
    """
    return _instantiate_group(logger_cfg, "logger")
