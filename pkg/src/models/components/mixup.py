from collections.abc import Sequence

import numpy as np
import torch
import torch.nn.functional as F


def mixup_batch(
    inputs: torch.Tensor,
    targets: torch.Tensor,
    class_count: int,
    alpha: float,
    seed: int | Sequence[int],
    lam: float | None = None,
) -> tuple[torch.Tensor, torch.Tensor, float]:
    """Mixes each sample with a partner from a seeded permutation of the batch.

    ``x̃ = λ·x + (1 − λ)·x[perm]`` and likewise for one-hot targets, with
    ``λ ~ Beta(α, α)`` unless forced.

    :param inputs: The batch inputs.
    :param targets: Integer labels or ``(batch, class_count)`` soft targets.
    :param class_count: Number of classes, for one-hot encoding.
    :param alpha: Beta concentration, must be positive.
    :param seed: Seed (or seed entropy sequence) of this batch's draw.
    :param lam: Fixed mixing weight in ``[0, 1]``; overrides the Beta draw.
    :return: The mixed inputs, the soft targets and the λ used.
    """
    if alpha <= 0:
        raise ValueError(f"mixup alpha must be positive, got {alpha}")

    rng = np.random.default_rng(seed)
    drawn = float(rng.beta(alpha, alpha))
    lam = drawn if lam is None else float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    perm = torch.from_numpy(rng.permutation(inputs.shape[0]))

    soft = targets.to(torch.float64) if targets.is_floating_point() else F.one_hot(targets.long(), class_count).to(torch.float64)
    mixed_inputs = lam * inputs + (1.0 - lam) * inputs[perm]
    mixed_targets = lam * soft + (1.0 - lam) * soft[perm]
    return mixed_inputs, mixed_targets, lam
