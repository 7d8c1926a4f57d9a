"""DenseNet-style convolutional encoder shared by both viewers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import InputTooSmall
from .nn import Conv2d, LayerNorm, Module
from .tensor import Tensor


@dataclass
class BackboneConfig:
    growth_rate: int = 12
    block_layers: tuple[int, ...] = (4, 4, 4)
    initial_channels: int = 24
    reduction: float = 0.5

    def __post_init__(self):
        self.block_layers = tuple(int(n) for n in self.block_layers)
        if self.growth_rate < 1:
            raise ValueError("growth_rate must be >= 1")
        if not self.block_layers or min(self.block_layers) < 1:
            raise ValueError("every dense block needs at least one layer")
        if not 0 < self.reduction <= 1:
            raise ValueError("reduction must lie in (0, 1]")

    @property
    def total_stride(self) -> int:
        # stride-2 stem, then one 2x pooling per transition
        return 2 ** len(self.block_layers)

    def channel_plan(self) -> list[int]:
        """Channel count after each block (and transition), ending with the output."""
        c = self.initial_channels
        plan = []
        for i, n in enumerate(self.block_layers):
            c += n * self.growth_rate
            if i < len(self.block_layers) - 1:
                c = int(np.floor(c * self.reduction))
            plan.append(c)
        return plan

    @property
    def out_channels(self) -> int:
        return self.channel_plan()[-1]


class DenseLayer(Module):
    def __init__(self, rng, c_in: int, growth: int):
        self.norm = LayerNorm(c_in, axis=1)
        self.conv = Conv2d(rng, c_in, growth, 3)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(T.relu(self.norm(x)))


class Transition(Module):
    def __init__(self, rng, c_in: int, c_out: int):
        self.norm = LayerNorm(c_in, axis=1)
        self.conv = Conv2d(rng, c_in, c_out, 1)

    def __call__(self, x: Tensor) -> Tensor:
        return T.avg_pool2d(self.conv(T.relu(self.norm(x))), 2)


class DenseNet(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.stem = Conv2d(rng, 1, cfg.initial_channels, 7, stride=2, padding=3)
        self.blocks: list[list[DenseLayer]] = []
        self.transitions: list[Transition] = []
        c = cfg.initial_channels
        for i, n in enumerate(cfg.block_layers):
            layers = []
            for _ in range(n):
                layers.append(DenseLayer(rng, c, cfg.growth_rate))
                c += cfg.growth_rate
            self.blocks.append(layers)
            if i < len(cfg.block_layers) - 1:
                c_out = int(np.floor(c * cfg.reduction))
                self.transitions.append(Transition(rng, c, c_out))
                c = c_out
        self.final_norm = LayerNorm(c, axis=1)
        self.out_channels = c

    def named_parameters(self, prefix: str = ""):
        yield from self.stem.named_parameters(prefix + "stem.")
        for i, layers in enumerate(self.blocks):
            for j, layer in enumerate(layers):
                yield from layer.named_parameters(f"{prefix}block{i}.{j}.")
        for i, tr in enumerate(self.transitions):
            yield from tr.named_parameters(f"{prefix}transition{i}.")
        yield from self.final_norm.named_parameters(prefix + "final_norm.")

    def __call__(self, images: Tensor) -> Tensor:
        """(N, 1, H, W) images in [0, 1] -> (N, C', ceil(H/s), ceil(W/s)) features."""
        s = self.cfg.total_stride
        if images.ndim != 4 or images.shape[2] < s or images.shape[3] < s:
            raise InputTooSmall(f"input {images.shape} must be (N, 1, H, W) with H, W >= {s}")
        x = self.stem(images)
        for i, layers in enumerate(self.blocks):
            for layer in layers:
                x = T.concat([x, layer(x)], axis=1)
            if i < len(self.transitions):
                x = self.transitions[i](x)
        return T.relu(self.final_norm(x))


def feature_mask(pixel_widths, width: int, stride: int) -> np.ndarray:
    """(N, W') boolean mask of feature columns that see real (unpadded) pixels."""
    w_feat = -(-width // stride)
    cols = np.arange(w_feat)
    valid = -(-np.asarray(pixel_widths) // stride)
    return cols[None, :] < valid[:, None]
