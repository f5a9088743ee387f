import warnings
from collections.abc import Callable, Iterable
from typing import Any

from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException

from utils.errors import ConfigError, DataFormatError, NumericalError, OsContractViolation
from utils.persistence import finalize_manifest
from utils.ranked_logger import RankedLogger

log = RankedLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def process_extras(cfg: DictConfig) -> None:
    """Applies optional utilities before the task is started.

    Utilities:
        - Ignoring python warnings
        - Quiet mode (no progress bar, no config tree printing)

    :param cfg: A DictConfig object containing the config tree.
    """
    extras = cfg.get("extras")
    if not extras:
        log.info("No extras config provided, skipping optional utilities")
        return

    assert isinstance(extras, DictConfig), "Extras config must be a DictConfig!"

    if extras.get("ignore_warnings"):
        log.info("Disabling python warnings! <cfg.extras.ignore_warnings=True>")
        warnings.filterwarnings("ignore")

    if extras.get("quiet"):
        log.info("Quiet mode! <cfg.extras.quiet=True>")
        extras.print_config = False
        if cfg.get("trainer") is not None:
            cfg.trainer.enable_progress_bar = False
            cfg.trainer.enable_model_summary = False
        # lightning refuses a disabled progress bar while a bar callback is configured
        if cfg.get("callbacks"):
            cfg.callbacks = None


def require_keys(cfg: DictConfig, keys: Iterable[str]) -> None:
    """Fail early when a dotted config key is missing or left as `???`.

    :param cfg: The composed config.
    :param keys: Dotted key paths, e.g. ``"sos.batch_size"``.
    """
    for key in keys:
        try:
            value = OmegaConf.select(cfg, key, throw_on_missing=True)
        except OmegaConfBaseException as ex:
            raise ConfigError(f"Missing required config key <{key}>") from ex
        if value is None:
            raise ConfigError(f"Missing required config key <{key}>")


def exit_code_for(ex: BaseException) -> int:
    """Maps a task failure onto the process exit code."""
    if isinstance(ex, ConfigError | OmegaConfBaseException):
        return EXIT_CONFIG
    if isinstance(ex, NumericalError | OsContractViolation):
        return EXIT_NUMERIC
    if isinstance(ex, DataFormatError | OSError):
        return EXIT_IO
    return 1


type TaskFunc = Callable[[DictConfig], tuple[dict[str, Any], dict[str, Any]]]


def exception_wrapper(task_func: TaskFunc) -> TaskFunc:
    """Optional decorator that controls the failure behavior when executing the task function.

    The run manifest is finalised in both outcomes, so a crashed run still leaves a
    parseable `manifest.json` with its status.

    :param task_func: The task function to be wrapped.

    :return: The wrapped task function.
    """

    def wrap(cfg: DictConfig) -> tuple[dict[str, Any], dict[str, Any]]:
        status = "failed"
        try:
            metric_dict, object_dict = task_func(cfg)
            status = "completed"
        except Exception as ex:
            log.exception("")
            raise ex
        finally:
            finalize_manifest(cfg, status=status)
            log.info(f"Output dir: {cfg.paths.output_dir}")
        return metric_dict, object_dict

    return wrap


def run_task(task_func: TaskFunc, cfg: DictConfig) -> tuple[int, dict[str, Any]]:
    """Runs a wrapped task and converts failures into exit codes.

    :param task_func: A task decorated with `exception_wrapper`.
    :param cfg: The composed config.
    :return: The exit code and the metric dict (empty on failure).
    """
    try:
        metric_dict, _ = task_func(cfg)
    except Exception as ex:
        code = exit_code_for(ex)
        log.error(f"Task failed! <exit_code={code}, error={type(ex).__name__}>")
        return code, {}
    return EXIT_OK, metric_dict


def get_metric_value(metric_dict: dict[str, Any], metric_name: str) -> float:
    """Safely retrieves value of the metric logged by a task.

    :param metric_dict: A dict containing metric values.
    :param metric_name: If provided, the name of the metric to retrieve.
    :return: If a metric name was provided, the value of the metric.
    """
    if metric_name not in metric_dict:
        raise ConfigError(
            f"Metric value not found! <metric_name={metric_name}>\n"
            "Make sure metric name recorded by the task is correct!\n"
            "Make sure `optimized_metric` name in `hparams_search` config is correct!"
        )

    metric_value = float(metric_dict[metric_name])
    log.info(f"Retrieved metric value! <{metric_name}={metric_value}>")

    return metric_value
