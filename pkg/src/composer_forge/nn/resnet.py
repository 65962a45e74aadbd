"""Configurable-depth residual CNN over piano-roll segments.

Standard layout: 7x7/stride-2 stem, 3x3/stride-2 max pool, four stages
of residual blocks, global average pooling, linear head.  Depths 18/34
use basic blocks, 50/101 use bottlenecks.  width_multiplier shrinks
every stage width for desk-scale runs; 1.0 is the full-width network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from . import functional as F
from .autodiff import Tensor

STAGE_PLANS = {
    18: ((2, 2, 2, 2), "basic"),
    34: ((3, 4, 6, 3), "basic"),
    50: ((3, 4, 6, 3), "bottleneck"),
    101: ((3, 4, 23, 3), "bottleneck"),
}

BASE_WIDTHS = (64, 128, 256, 512)


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 50
    width_multiplier: float = 1.0
    in_channels: int = 2
    n_classes: int = 13

    def __post_init__(self):
        if self.depth not in STAGE_PLANS:
            raise ConfigError(f"depth must be one of {sorted(STAGE_PLANS)}, got {self.depth}")
        if not 0.0 < self.width_multiplier <= 1.0:
            raise ConfigError(f"width_multiplier must be in (0, 1], got {self.width_multiplier}")
        if self.in_channels not in (1, 2):
            raise ConfigError(f"in_channels must be 1 or 2, got {self.in_channels}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be at least 2, got {self.n_classes}")

    def stage_widths(self) -> tuple[int, ...]:
        return tuple(max(1, round(w * self.width_multiplier)) for w in BASE_WIDTHS)


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(np.float32)


class Conv2d:
    """Convolution layer without bias; one always sits in front of a norm."""

    def __init__(self, rng: np.random.Generator, in_ch: int, out_ch: int,
                 kernel: int, stride: int = 1, padding: int = 0):
        self.stride = stride
        self.padding = padding
        shape = (out_ch, in_ch, kernel, kernel)
        self.weight = Tensor(_he_normal(rng, shape, in_ch * kernel * kernel),
                             requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, stride=self.stride, padding=self.padding)

    def named_tensors(self):
        yield "weight", self.weight, True


class BatchNorm2d:
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.running_mean = Tensor(np.zeros(channels, dtype=np.float32))
        self.running_var = Tensor(np.ones(channels, dtype=np.float32))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return F.batch_norm2d(x, self.gamma, self.beta,
                              self.running_mean.data, self.running_var.data,
                              training, momentum=self.momentum, eps=self.eps)

    def named_tensors(self):
        yield "gamma", self.gamma, True
        yield "beta", self.beta, True
        yield "running_mean", self.running_mean, False
        yield "running_var", self.running_var, False


class Linear:
    def __init__(self, rng: np.random.Generator, in_features: int, out_features: int):
        # small head init keeps fresh-model logits near zero, so the
        # initial CE sits at ln(n_classes)
        w = rng.standard_normal((out_features, in_features)) * 0.01
        self.weight = Tensor(w.astype(np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)

    def named_tensors(self):
        yield "weight", self.weight, True
        yield "bias", self.bias, True


class Downsample:
    """1x1 projection shortcut used when a block changes shape."""

    def __init__(self, rng: np.random.Generator, in_ch: int, out_ch: int, stride: int):
        self.conv = Conv2d(rng, in_ch, out_ch, kernel=1, stride=stride)
        self.bn = BatchNorm2d(out_ch)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.bn(self.conv(x), training)

    def named_children(self):
        yield "conv", self.conv
        yield "bn", self.bn


class BasicBlock:
    expansion = 1

    def __init__(self, rng: np.random.Generator, in_ch: int, width: int, stride: int):
        out_ch = width * self.expansion
        self.conv1 = Conv2d(rng, in_ch, width, kernel=3, stride=stride, padding=1)
        self.bn1 = BatchNorm2d(width)
        self.conv2 = Conv2d(rng, width, out_ch, kernel=3, stride=1, padding=1)
        self.bn2 = BatchNorm2d(out_ch)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = Downsample(rng, in_ch, out_ch, stride)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        out = F.relu(self.bn1(self.conv1(x), training))
        out = self.bn2(self.conv2(out), training)
        shortcut = x if self.downsample is None else self.downsample(x, training)
        return F.relu(F.add(out, shortcut))

    def named_children(self):
        yield "conv1", self.conv1
        yield "bn1", self.bn1
        yield "conv2", self.conv2
        yield "bn2", self.bn2
        if self.downsample is not None:
            yield "downsample", self.downsample


class BottleneckBlock:
    expansion = 4

    def __init__(self, rng: np.random.Generator, in_ch: int, width: int, stride: int):
        out_ch = width * self.expansion
        self.conv1 = Conv2d(rng, in_ch, width, kernel=1)
        self.bn1 = BatchNorm2d(width)
        self.conv2 = Conv2d(rng, width, width, kernel=3, stride=stride, padding=1)
        self.bn2 = BatchNorm2d(width)
        self.conv3 = Conv2d(rng, width, out_ch, kernel=1)
        self.bn3 = BatchNorm2d(out_ch)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = Downsample(rng, in_ch, out_ch, stride)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        out = F.relu(self.bn1(self.conv1(x), training))
        out = F.relu(self.bn2(self.conv2(out), training))
        out = self.bn3(self.conv3(out), training)
        shortcut = x if self.downsample is None else self.downsample(x, training)
        return F.relu(F.add(out, shortcut))

    def named_children(self):
        yield "conv1", self.conv1
        yield "bn1", self.bn1
        yield "conv2", self.conv2
        yield "bn2", self.bn2
        yield "conv3", self.conv3
        yield "bn3", self.bn3
        if self.downsample is not None:
            yield "downsample", self.downsample


class Stem:
    def __init__(self, rng: np.random.Generator, in_channels: int, width: int):
        self.conv = Conv2d(rng, in_channels, width, kernel=7, stride=2, padding=3)
        self.bn = BatchNorm2d(width)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        out = F.relu(self.bn(self.conv(x), training))
        return F.max_pool2d(out, kernel=3, stride=2, padding=1)

    def named_children(self):
        yield "conv", self.conv
        yield "bn", self.bn


class ResNet:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.training = True
        rng = np.random.default_rng(seed)

        plan, kind = STAGE_PLANS[config.depth]
        widths = config.stage_widths()
        block_cls = BasicBlock if kind == "basic" else BottleneckBlock

        self.stem = Stem(rng, config.in_channels, widths[0])
        self.layers: list[list] = []
        in_ch = widths[0]
        for stage, (count, width) in enumerate(zip(plan, widths)):
            stride = 1 if stage == 0 else 2
            blocks = []
            for b in range(count):
                blocks.append(block_cls(rng, in_ch, width, stride if b == 0 else 1))
                in_ch = width * block_cls.expansion
            self.layers.append(blocks)
        self.fc = Linear(rng, in_ch, config.n_classes)

    def train(self) -> "ResNet":
        self.training = True
        return self

    def eval(self) -> "ResNet":
        self.training = False
        return self

    def __call__(self, batch) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        if x.ndim != 4:
            raise ShapeError(f"expected (N, C, H, W) batch, got shape {x.shape}")
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(f"model expects {self.config.in_channels} input channels, "
                             f"batch has {x.shape[1]}")
        out = self.stem(x, self.training)
        for blocks in self.layers:
            for block in blocks:
                out = block(out, self.training)
        out = F.global_avg_pool(out)
        return self.fc(out)

    def _walk(self):
        """Yield (name, tensor, trainable) in a fixed traversal order."""
        def from_module(prefix, module):
            if hasattr(module, "named_children"):
                for child_name, child in module.named_children():
                    yield from from_module(f"{prefix}.{child_name}", child)
            else:
                for tensor_name, tensor, trainable in module.named_tensors():
                    yield f"{prefix}.{tensor_name}", tensor, trainable

        yield from from_module("stem", self.stem)
        for i, blocks in enumerate(self.layers, start=1):
            for j, block in enumerate(blocks):
                yield from from_module(f"layer{i}.{j}", block)
        yield from from_module("fc", self.fc)

    def named_parameters(self) -> dict[str, Tensor]:
        return {name: t for name, t, trainable in self._walk() if trainable}

    def state_dict(self) -> dict[str, Tensor]:
        return {name: t for name, t, _ in self._walk()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        """Strict load: names and shapes must match exactly."""
        state = self.state_dict()
        missing = sorted(set(state) - set(arrays))
        unexpected = sorted(set(arrays) - set(state))
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing {missing[:3]}, unexpected {unexpected[:3]}")
        for name, tensor in state.items():
            value = arrays[name]
            if value.shape != tensor.data.shape:
                raise ShapeError(f"{name}: shape {value.shape} does not match {tensor.data.shape}")
            tensor.data = value.astype(tensor.data.dtype, copy=True)

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.named_parameters().values())

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.zero_grad()


def build_model(config: ModelConfig, seed: int = 0) -> ResNet:
    return ResNet(config, seed=seed)
