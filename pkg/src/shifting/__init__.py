from shifting.callback import StochasticOptimumShifting
from shifting.complexity import QUOTED_COMPLEXITY, ScalingFit, ScalingSample, fit_scaling, time_os_scaling
from shifting.sampling import Sampling, sample_os_batch
from shifting.solver import (
    OsConfig,
    OsReport,
    apply_os,
    extract_system,
    solve_min_norm,
    solve_min_norm_columnwise,
)

__all__ = [
    "QUOTED_COMPLEXITY",
    "OsConfig",
    "OsReport",
    "Sampling",
    "ScalingFit",
    "ScalingSample",
    "StochasticOptimumShifting",
    "apply_os",
    "extract_system",
    "fit_scaling",
    "sample_os_batch",
    "solve_min_norm",
    "solve_min_norm_columnwise",
    "time_os_scaling",
]
