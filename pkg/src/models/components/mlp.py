import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from itertools import pairwise

import torch
from torch import nn


@dataclass
class ForwardTrace:
    """Per-layer activations captured during a forward pass.

    Index ``i`` of each list belongs to hidden layer ``i``; the final layer only
    contributes its pre-activation (the logits).
    """

    pre_activations: list[torch.Tensor] = field(default_factory=list)
    post_activations: list[torch.Tensor] = field(default_factory=list)
    relu_masks: list[torch.Tensor] = field(default_factory=list)


class MlpModel(nn.Module):
    """A fully-connected ReLU network computing ``relu(...relu(x·W₁ + b₁)...)·V + c``.

    Weights are stored ``[in × out]`` so the final weight is ``V`` of the system
    ``A·V = Z`` without transposition.
    """

    def __init__(self, layer_dims: Sequence[int] = (784, 64, 10), seed: int = 0) -> None:
        """Initialize a `MlpModel`.

        :param layer_dims: Widths from input to output, e.g. ``(784, 64, 10)``.
        :param seed: Seed of the uniform Glorot initialization. Biases start at zero.
        """
        super().__init__()
        if len(layer_dims) < 2:
            raise ValueError(f"Need at least input and output widths, got {list(layer_dims)}")

        self.layer_dims = tuple(int(d) for d in layer_dims)
        self.seed = seed

        generator = torch.Generator().manual_seed(seed)
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for fan_in, fan_out in pairwise(self.layer_dims):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            weight = torch.rand(fan_in, fan_out, generator=generator, dtype=torch.float64)
            self.weights.append(nn.Parameter((2.0 * weight - 1.0) * bound))
            self.biases.append(nn.Parameter(torch.zeros(fan_out, dtype=torch.float64)))

    @property
    def final_weight(self) -> nn.Parameter:
        return self.weights[-1]

    @property
    def final_bias(self) -> nn.Parameter:
        return self.biases[-1]

    @property
    def feature_dim(self) -> int:
        return self.layer_dims[-2]

    @property
    def class_count(self) -> int:
        return self.layer_dims[-1]

    def _flatten(self, x: torch.Tensor) -> torch.Tensor:
        # (batch, *dims) -> (batch, prod(dims))
        x = x.reshape(x.shape[0], -1).to(self.final_weight.dtype)
        if x.shape[1] != self.layer_dims[0]:
            raise ValueError(f"Expected {self.layer_dims[0]} input features, got {x.shape[1]}")
        return x

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Penultimate activations, one row per sample (the input matrix ``A``).

        :param x: The input tensor.
        :return: A tensor of shape ``(batch, feature_dim)``.
        """
        h = self._flatten(x)
        # index access keeps functionally swapped parameters (slicing re-wraps them)
        for index in range(len(self.weights) - 1):
            h = torch.relu(h @ self.weights[index] + self.biases[index])
        return h

    def forward_trace(
        self, x: torch.Tensor, capture: bool = True
    ) -> tuple[torch.Tensor, ForwardTrace | None]:
        """Forward pass that optionally records pre-/post-activations and ReLU masks.

        :param x: The input tensor.
        :param capture: Whether to populate the trace.
        :return: The logits and the trace (``None`` when not captured).
        """
        trace = ForwardTrace() if capture else None
        h = self._flatten(x)
        last = len(self.weights) - 1
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases, strict=True)):
            pre = h @ weight + bias
            if trace is not None:
                trace.pre_activations.append(pre)
            if index == last:
                return pre, trace
            h = torch.relu(pre)
            if trace is not None:
                trace.relu_masks.append((pre > 0).to(pre.dtype))
                trace.post_activations.append(h)
        raise AssertionError("unreachable")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Perform a single forward pass through the network.

        :param x: The input tensor.
        :return: A tensor of logits.
        """
        logits, _ = self.forward_trace(x, capture=False)
        return logits


if __name__ == "__main__":
    _ = MlpModel()
