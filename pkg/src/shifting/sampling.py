from enum import StrEnum

import torch


class Sampling(StrEnum):
    UNIFORM = "uniform"
    STRATIFIED = "stratified"


def sample_os_batch(
    labels: torch.Tensor, batch_size: int, sampling: Sampling | str, seed: int
) -> torch.Tensor:
    """Draws the row indices of one OS batch without replacement.

    Uniform mode takes the head of a seeded permutation. Stratified mode
    permutes each class separately and deals samples round-robin over the
    classes in ascending label order, so every class is represented once the
    batch reaches the class count.

    :param labels: Integer labels of the pool, shape ``(samples,)``.
    :param batch_size: Requested rows b₂, capped at the pool size.
    :param sampling: ``"uniform"`` or ``"stratified"``.
    :param seed: Seed of this draw.
    :return: A 1-D index tensor of length ``min(batch_size, samples)``.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")

    size = min(batch_size, labels.shape[0])
    generator = torch.Generator().manual_seed(seed)

    if Sampling(sampling) == Sampling.UNIFORM:
        return torch.randperm(labels.shape[0], generator=generator)[:size]

    classes = torch.unique(labels)
    picks: list[torch.Tensor] = []
    keys: list[torch.Tensor] = []
    for position, label in enumerate(classes.tolist()):
        members = torch.nonzero(labels == label).flatten()
        picks.append(members[torch.randperm(members.numel(), generator=generator)])
        # depth-major key: every class contributes its k-th sample before any (k+1)-th
        keys.append(torch.arange(members.numel()) * classes.numel() + position)

    order = torch.argsort(torch.cat(keys))
    return torch.cat(picks)[order[:size]]
