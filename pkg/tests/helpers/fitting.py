import torch

from data.components.dataset import Dataset
from models.components.mlp import MlpModel


def fit_briefly(model: MlpModel, data: Dataset, steps: int = 200, lr: float = 0.1) -> MlpModel:
    """Full-batch gradient descent, enough to leave the initialization behind."""
    optimizer = torch.optim.SGD(model.parameters(), lr=lr)
    for _ in range(steps):
        optimizer.zero_grad()
        torch.nn.functional.cross_entropy(model(data.inputs), data.labels).backward()
        optimizer.step()
    return model
