"""Squeeze-and-excitation channel recalibration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import ConfigError
from .tensor import DimensionError, Tensor, fully_connected, global_avg_pool, mul, relu, sigmoid


@dataclass
class SeConfig:
    channels: int
    reduction: int = 16

    def validate(self) -> None:
        if self.channels < 1 or self.reduction < 1 or self.channels % self.reduction:
            raise ConfigError(
                f"SE channels {self.channels} not divisible by reduction {self.reduction}"
            )


@dataclass
class SeParams:
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor

    def named(self, prefix: str = "se") -> dict[str, Tensor]:
        return {
            f"{prefix}.fc1.weight": self.fc1_w,
            f"{prefix}.fc1.bias": self.fc1_b,
            f"{prefix}.fc2.weight": self.fc2_w,
            f"{prefix}.fc2.bias": self.fc2_b,
        }


def init_se_params(config: SeConfig, rng: np.random.Generator) -> SeParams:
    config.validate()
    c = config.channels
    hid = c // config.reduction
    return SeParams(
        fc1_w=Tensor(rng.normal(0.0, np.sqrt(2.0 / c), size=(hid, c)), requires_grad=True),
        fc1_b=Tensor(np.zeros(hid), requires_grad=True),
        fc2_w=Tensor(rng.normal(0.0, np.sqrt(1.0 / hid), size=(c, hid)), requires_grad=True),
        fc2_b=Tensor(np.zeros(c), requires_grad=True),
    )


def se_channel_weights(x: Tensor, params: SeParams) -> Tensor:
    """sigmoid(FC2(ReLU(FC1(GAP(x))))), shape (n, c, 1, 1)."""
    h = relu(fully_connected(global_avg_pool(x), params.fc1_w, params.fc1_b))
    return sigmoid(fully_connected(h, params.fc2_w, params.fc2_b))


def se_forward(x: Tensor, params: SeParams) -> Tensor:
    if x.data.ndim != 4 or x.shape[1] != params.fc1_w.shape[1]:
        raise DimensionError(
            f"SE block expects {params.fc1_w.shape[1]} channels, got shape {x.shape}"
        )
    return mul(x, se_channel_weights(x, params))
