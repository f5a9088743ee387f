import time
from collections.abc import Sequence
from dataclasses import dataclass
from statistics import median

import torch

from shifting.solver import solve_min_norm, solve_min_norm_columnwise

# The cost model quoted for OS is O(b²(m+n) + n³) with the cubic term attributed
# to the inverse, but the inverted matrix A*A*ᵀ is b×b. The fit below uses b³.
QUOTED_COMPLEXITY = "O(b²(m+n)+n³)"


@dataclass(frozen=True)
class ScalingSample:
    batch_size: int
    seconds: float


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares fit of ``t = c₁b² + c₂b³`` (no intercept)."""

    c1: float
    c2: float
    r_squared: float

    def predict(self, batch_size: int) -> float:
        return self.c1 * batch_size**2 + self.c2 * batch_size**3


def time_os_scaling(
    batch_sizes: Sequence[int],
    feature_dim: int = 512,
    outputs: int = 10,
    repeats: int = 3,
    seed: int = 0,
    columnwise: bool = False,
) -> list[ScalingSample]:
    """Times the OS solve on random full-rank systems for each batch size.

    :param batch_sizes: Row counts b to time; each must stay below `feature_dim`.
    :param feature_dim: Fixed feature dimension m.
    :param outputs: Fixed output count n.
    :param repeats: Timings per size; the median is kept.
    :param seed: Seed of the random systems.
    :param columnwise: Time the per-column path instead of the joint one.
    :return: One sample per batch size.
    """
    solve = solve_min_norm_columnwise if columnwise else solve_min_norm
    generator = torch.Generator().manual_seed(seed)
    samples: list[ScalingSample] = []
    for b in batch_sizes:
        if not 1 <= b < feature_dim:
            raise ValueError(f"batch size {b} must lie in [1, {feature_dim})")
        a = torch.randn(b, feature_dim, generator=generator, dtype=torch.float64)
        v = torch.randn(feature_dim, outputs, generator=generator, dtype=torch.float64)
        z = a @ v

        timings = []
        for _ in range(repeats):
            start = time.perf_counter()
            solve(a, z)
            timings.append(time.perf_counter() - start)
        samples.append(ScalingSample(batch_size=b, seconds=median(timings)))
    return samples


def fit_scaling(samples: Sequence[ScalingSample]) -> ScalingFit:
    """Fits ``t = c₁b² + c₂b³`` and reports the coefficient of determination."""
    if len(samples) < 2:
        raise ValueError("Need at least two samples to fit two coefficients")

    b = torch.tensor([s.batch_size for s in samples], dtype=torch.float64)
    t = torch.tensor([s.seconds for s in samples], dtype=torch.float64)
    design = torch.stack([b**2, b**3], dim=1)
    coeffs = torch.linalg.lstsq(design, t[:, None], driver="gelsd").solution.flatten()

    residual = t - design @ coeffs
    total = float(((t - t.mean()) ** 2).sum())
    r_squared = 1.0 - float((residual**2).sum()) / total if total > 0 else 1.0
    return ScalingFit(c1=float(coeffs[0]), c2=float(coeffs[1]), r_squared=r_squared)
