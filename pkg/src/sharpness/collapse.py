from dataclasses import dataclass

import torch

from utils.errors import DegenerateScatterError

DEGENERATE_BETWEEN = 1e-15


@dataclass(frozen=True)
class NcReport:
    """Within/between class scatter of penultimate features (neural collapse, NC1)."""

    within_class_scatter: float
    between_class_scatter: float
    nc1_ratio: float


def nc1_metric(features: torch.Tensor, labels: torch.Tensor) -> NcReport:
    """Ratio of within-class to between-class scatter.

    Within is the mean squared distance of each sample to its class mean. Between
    is the unweighted mean over classes of the squared distance from the class
    mean to the global feature mean.

    :param features: Penultimate activations ``(samples, m)``.
    :param labels: Integer class per sample.
    :return: Both scatters and their ratio.
    """
    if features.shape[0] != labels.shape[0]:
        raise ValueError(f"{features.shape[0]} feature rows but {labels.shape[0]} labels")

    features = features.to(torch.float64)
    classes, inverse = torch.unique(labels, return_inverse=True)
    if classes.numel() < 2:
        raise DegenerateScatterError(f"Between-class scatter needs >= 2 classes <classes={classes.numel()}>")

    sums = torch.zeros(classes.numel(), features.shape[1], dtype=torch.float64).index_add_(0, inverse, features)
    counts = torch.bincount(inverse, minlength=classes.numel()).to(torch.float64)
    means = sums / counts[:, None]

    within = float(((features - means[inverse]) ** 2).sum(dim=1).mean())
    between = float(((means - features.mean(dim=0)) ** 2).sum(dim=1).mean())

    scale = 1.0 + float((features**2).sum(dim=1).mean())
    if between <= DEGENERATE_BETWEEN * scale:
        raise DegenerateScatterError(f"Class means coincide <between_class_scatter={between:.3e}>")
    return NcReport(within_class_scatter=within, between_class_scatter=between, nc1_ratio=within / between)
