"""
Network Layers

Building blocks of the two convolutional streams and their heads. Each layer
owns named ``Parameter`` objects (and batch-norm running statistics) and is
called with a ``mode`` of 'train' or 'infer'.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from engine import ops
from engine.ops import BatchNormState
from engine.rng import Rng
from engine.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)


def he_uniform(rng: Rng, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape).astype(np.float32)


def glorot_uniform(rng: Rng, shape: Tuple[int, int]) -> np.ndarray:
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, shape).astype(np.float32)


class Layer:
    """Base class: named parameters, child layers and batch-norm buffers."""

    def own_parameters(self) -> List[Parameter]:
        return []

    def children(self) -> List['Layer']:
        return []

    def parameters(self) -> Dict[str, Parameter]:
        found = {p.name: p for p in self.own_parameters()}
        for child in self.children():
            found.update(child.parameters())
        return found

    def batchnorms(self) -> List['BatchNorm']:
        found = []
        for child in self.children():
            found.extend(child.batchnorms())
        return found


class BatchNorm(Layer):
    """Per-channel batch normalisation with learned scale and shift.

    A layer whose gamma is frozen always normalises with its running
    statistics, so freezing leaves the stored statistics untouched too.
    """

    def __init__(self, prefix: str, channels: int):
        self.prefix = prefix
        self.gamma = Parameter.create(f"{prefix}.gamma", np.ones(channels, dtype=np.float32))
        self.beta = Parameter.create(f"{prefix}.beta", np.zeros(channels, dtype=np.float32))
        self.state = BatchNormState.initialized(channels)

    def own_parameters(self) -> List[Parameter]:
        return [self.gamma, self.beta]

    def batchnorms(self) -> List['BatchNorm']:
        return [self]

    def buffers(self) -> Dict[str, np.ndarray]:
        return {
            f"{self.prefix}.running_mean": self.state.running_mean,
            f"{self.prefix}.running_var": self.state.running_var,
        }

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        effective = 'infer' if self.gamma.frozen else mode
        return ops.batchnorm(x, self.gamma.tensor, self.beta.tensor, self.state, mode=effective)


class ConvBN(Layer):
    """Convolution (plain or depthwise-separable, no bias) followed by BN and an optional ReLU."""

    def __init__(self, prefix: str, in_channels: int, out_channels: int, kernel: int, rng: Rng,
                 stride: int = 1, separable: bool = False, activation: bool = True):
        self.prefix = prefix
        self.stride = stride
        self.separable = separable
        self.activation = activation
        if separable:
            self.depthwise = Parameter.create(
                f"{prefix}.depthwise", he_uniform(rng.derive(0), (kernel, kernel, in_channels), kernel * kernel))
            self.weight = Parameter.create(
                f"{prefix}.pointwise", he_uniform(rng.derive(1), (1, 1, in_channels, out_channels), in_channels))
        else:
            self.depthwise = None
            self.weight = Parameter.create(
                f"{prefix}.weight",
                he_uniform(rng.derive(1), (kernel, kernel, in_channels, out_channels), kernel * kernel * in_channels))
        self.bn = BatchNorm(f"{prefix}.bn", out_channels)

    def own_parameters(self) -> List[Parameter]:
        if self.depthwise is not None:
            return [self.depthwise, self.weight]
        return [self.weight]

    def children(self) -> List[Layer]:
        return [self.bn]

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        if self.separable:
            y = ops.separable_conv2d(x, self.depthwise.tensor, self.weight.tensor, stride=self.stride)
        else:
            y = ops.conv2d(x, self.weight.tensor, stride=self.stride)
        y = self.bn(y, mode)
        return ops.relu(y) if self.activation else y


class ResidualBlock(Layer):
    """1x1 conv, 3x3 separable conv (stride s), 1x1 conv, plus a projection skip when the shape changes.

    Output spatial extent is ceil(input / stride); the sum passes through a final ReLU.
    """

    def __init__(self, prefix: str, in_channels: int, out_channels: int, stride: int, rng: Rng):
        self.prefix = prefix
        self.reduce = ConvBN(f"{prefix}.conv1", in_channels, out_channels, 1, rng.derive(0))
        self.spatial = ConvBN(f"{prefix}.sep", out_channels, out_channels, 3, rng.derive(1),
                              stride=stride, separable=True)
        self.expand = ConvBN(f"{prefix}.conv3", out_channels, out_channels, 1, rng.derive(2), activation=False)
        self.skip: Optional[ConvBN] = None
        if stride != 1 or in_channels != out_channels:
            self.skip = ConvBN(f"{prefix}.skip", in_channels, out_channels, 1, rng.derive(3),
                               stride=stride, activation=False)

    def children(self) -> List[Layer]:
        layers = [self.reduce, self.spatial, self.expand]
        return layers + [self.skip] if self.skip is not None else layers

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        y = self.expand(self.spatial(self.reduce(x, mode), mode), mode)
        shortcut = self.skip(x, mode) if self.skip is not None else x
        return ops.relu(ops.add(y, shortcut))


class StreamWeights(Layer):
    """One convolutional stream: 5x5 stride-2 stem and three stride-2 residual blocks."""

    def __init__(self, prefix: str, channels: Tuple[int, int, int, int], rng: Rng):
        self.prefix = prefix
        stem, c1, c2, c3 = channels
        self.stem = ConvBN(f"{prefix}.stem", 1, stem, 5, rng.derive(0), stride=2)
        self.res1 = ResidualBlock(f"{prefix}.res1", stem, c1, 2, rng.derive(1))
        self.res2 = ResidualBlock(f"{prefix}.res2", c1, c2, 2, rng.derive(2))
        self.res3 = ResidualBlock(f"{prefix}.res3", c2, c3, 2, rng.derive(3))

    def children(self) -> List[Layer]:
        return [self.stem, self.res1, self.res2, self.res3]

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return self.res3(self.res2(self.res1(self.stem(x, mode), mode), mode), mode)


class DenseHead(Layer):
    """Global average pooling, dropout and an affine map; used for both the embedding and the writer head."""

    def __init__(self, prefix: str, in_features: int, out_features: int, dropout_rate: float, rng: Rng):
        self.prefix = prefix
        self.dropout_rate = dropout_rate
        self.weight = Parameter.create(f"{prefix}.weight", glorot_uniform(rng, (in_features, out_features)))
        self.bias = Parameter.create(f"{prefix}.bias", np.zeros(out_features, dtype=np.float32))

    def own_parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def __call__(self, feature_map: Tensor, mode: str, rng: Optional[Rng] = None) -> Tensor:
        pooled = ops.gap(feature_map)
        dropped = ops.dropout(pooled, self.dropout_rate, rng, mode)
        return ops.affine(dropped, self.weight.tensor, self.bias.tensor)
