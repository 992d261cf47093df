"""Channel shuffle and the discriminative kernel convolution (DKC) block.

Data flow for one block::

    x --shuffle--> P --branch_i (dilated conv, BN, ReLU)--> P_i
    P' = sum_i P_i
    Q  = GMP(P') + GAP(P')
    R  = sigmoid(FC2(dropout(ReLU(FC1(Q)))))
    S' = sum_i R * P_i
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    BatchNormStats,
    DimensionError,
    Tensor,
    add_n,
    batch_norm,
    conv2d_dilated,
    dropout,
    fully_connected,
    global_avg_pool,
    global_max_pool,
    mul,
    permute_channels,
    relu,
    sigmoid,
    add,
)


class ConfigError(ValueError):
    pass


@dataclass
class DkcConfig:
    in_channels: int
    groups: int = 2
    dilations: list[int] = field(default_factory=lambda: [2, 3, 4])
    kernel_size: int = 2
    reduction: int = 16
    dropout: float = 0.25

    def validate(self) -> None:
        c = self.in_channels
        if c < 1:
            raise ConfigError("in_channels must be positive")
        if self.groups < 1 or c % self.groups:
            raise ConfigError(f"channels {c} not divisible by shuffle groups {self.groups}")
        if self.reduction < 1 or c % self.reduction:
            raise ConfigError(f"channels {c} not divisible by reduction {self.reduction}")
        if not self.dilations or any(int(d) < 1 for d in self.dilations):
            raise ConfigError(f"dilations must be a non-empty list of ints >= 1, got {self.dilations}")
        if self.kernel_size < 1:
            raise ConfigError("kernel_size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def hidden(self) -> int:
        return self.in_channels // self.reduction


@dataclass
class DkcParams:
    """Learnable tensors of one DKC block plus its BN running statistics."""

    kernels: list[Tensor]
    gammas: list[Tensor]
    betas: list[Tensor]
    bn_stats: list[BatchNormStats]
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor

    def named(self, prefix: str = "dkc") -> dict[str, Tensor]:
        out = {}
        for i, (k, g, b) in enumerate(zip(self.kernels, self.gammas, self.betas)):
            out[f"{prefix}.branch{i}.kernel"] = k
            out[f"{prefix}.branch{i}.bn.gamma"] = g
            out[f"{prefix}.branch{i}.bn.beta"] = b
        out[f"{prefix}.fc1.weight"] = self.fc1_w
        out[f"{prefix}.fc1.bias"] = self.fc1_b
        out[f"{prefix}.fc2.weight"] = self.fc2_w
        out[f"{prefix}.fc2.bias"] = self.fc2_b
        return out

    def named_stats(self, prefix: str = "dkc") -> dict[str, BatchNormStats]:
        return {f"{prefix}.branch{i}.bn": s for i, s in enumerate(self.bn_stats)}


def init_dkc_params(config: DkcConfig, rng: np.random.Generator) -> DkcParams:
    """He-normal conv/FC weights, unit gamma, zero beta and biases."""
    config.validate()
    c, k, hid = config.in_channels, config.kernel_size, config.hidden

    def param(a):
        return Tensor(a, requires_grad=True)

    kernels = [
        param(rng.normal(0.0, np.sqrt(2.0 / (c * k * k)), size=(c, c, k, k)))
        for _ in config.dilations
    ]
    return DkcParams(
        kernels=kernels,
        gammas=[param(np.ones(c)) for _ in config.dilations],
        betas=[param(np.zeros(c)) for _ in config.dilations],
        bn_stats=[BatchNormStats.zeros(c) for _ in config.dilations],
        fc1_w=param(rng.normal(0.0, np.sqrt(2.0 / c), size=(hid, c))),
        fc1_b=param(np.zeros(hid)),
        fc2_w=param(rng.normal(0.0, np.sqrt(1.0 / hid), size=(c, hid))),
        fc2_b=param(np.zeros(c)),
    )


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """perm[k] = source channel of output channel k.

    Channel a*(C/g) + b lands at b*g + a, i.e. reshape to (g, C/g),
    transpose, flatten.
    """
    if groups < 1 or channels % groups:
        raise ValueError(f"channels {channels} not divisible by groups {groups}")
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    return permute_channels(x, shuffle_permutation(x.shape[1], groups))


def dkc_branch(p: Tensor, config: DkcConfig, params: DkcParams, i: int, mode: str = "train") -> Tensor:
    if p.shape[1] != config.in_channels:
        raise DimensionError(f"expected {config.in_channels} channels, got {p.shape[1]}")
    y = conv2d_dilated(p, params.kernels[i], dilation=int(config.dilations[i]), padding="same")
    y = batch_norm(y, params.gammas[i], params.betas[i], params.bn_stats[i], mode)
    return relu(y)


def dkc_fuse(branches: list[Tensor]) -> Tensor:
    return add_n(branches)


def dkc_squeeze(fused: Tensor) -> Tensor:
    return add(global_max_pool(fused), global_avg_pool(fused))


def dkc_excite(
    q: Tensor,
    config: DkcConfig,
    params: DkcParams,
    rng: np.random.Generator | None = None,
    mode: str = "train",
) -> Tensor:
    """FC1 -> ReLU -> dropout -> FC2 -> sigmoid, giving weights in (0, 1)."""
    config.validate()
    if q.data.ndim != 4 or q.shape[1:] != (config.in_channels, 1, 1):
        raise DimensionError(f"excitation input must be (n, {config.in_channels}, 1, 1), got {q.shape}")
    h = relu(fully_connected(q, params.fc1_w, params.fc1_b))
    h = dropout(h, config.dropout, rng, mode)
    return sigmoid(fully_connected(h, params.fc2_w, params.fc2_b))


def dkc_reweight(r: Tensor, branches: list[Tensor]) -> Tensor:
    return add_n([mul(b, r) for b in branches])


def dkc_forward(
    x: Tensor,
    config: DkcConfig,
    params: DkcParams,
    rng: np.random.Generator | None = None,
    mode: str = "train",
) -> Tensor:
    config.validate()
    if x.data.ndim != 4 or x.shape[1] != config.in_channels:
        raise DimensionError(f"expected (n, {config.in_channels}, h, w), got {x.shape}")
    p = channel_shuffle(x, config.groups)
    branches = [dkc_branch(p, config, params, i, mode) for i in range(len(config.dilations))]
    q = dkc_squeeze(dkc_fuse(branches))
    r = dkc_excite(q, config, params, rng, mode)
    return dkc_reweight(r, branches)
