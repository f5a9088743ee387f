from utils.errors import (
    ConfigError,
    DataFormatError,
    DegenerateScatterError,
    DivergenceError,
    InconsistentSystemError,
    NotPositiveDefiniteError,
    NumericalError,
    OsContractViolation,
    RankError,
    ShapeError,
    SolverError,
    StepSizeError,
)
from utils.instantiators import instantiate_callbacks, instantiate_exp_loggers
from utils.persistence import (
    finalize_manifest,
    log_hyperparameters,
    save_config,
    write_manifest,
)
from utils.ranked_logger import RankedLogger
from utils.task_helpers import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_NUMERIC,
    EXIT_OK,
    exception_wrapper,
    exit_code_for,
    get_metric_value,
    process_extras,
    require_keys,
    run_task,
)

__all__ = [
    "EXIT_CONFIG",
    "EXIT_IO",
    "EXIT_NUMERIC",
    "EXIT_OK",
    "ConfigError",
    "DataFormatError",
    "DegenerateScatterError",
    "DivergenceError",
    "InconsistentSystemError",
    "NotPositiveDefiniteError",
    "NumericalError",
    "OsContractViolation",
    "RankError",
    "RankedLogger",
    "ShapeError",
    "SolverError",
    "StepSizeError",
    "exception_wrapper",
    "exit_code_for",
    "finalize_manifest",
    "get_metric_value",
    "instantiate_callbacks",
    "instantiate_exp_loggers",
    "log_hyperparameters",
    "process_extras",
    "require_keys",
    "run_task",
    "save_config",
    "write_manifest",
]
