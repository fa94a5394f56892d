"""Configurable 3D convolutional regression network.

Layout: [conv3x3x3 -> batch norm -> ReLU -> maxpool 2] per conv block,
global average pooling, [linear -> ReLU] per hidden width, linear output.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import ParameterError
from . import layers as L


@dataclass(frozen=True)
class NetworkConfig:
    input_resolution: int = 16
    input_channels: int = 6
    conv_channels: tuple = (4, 8, 16, 32)
    fc_widths: tuple = (32, 32, 16)
    output_dim: int = 6
    kernel: int = 3
    conv_padding: int = 1
    pool: int = 2

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "fc_widths", tuple(int(c) for c in self.fc_widths))
        if self.kernel != 3 or self.conv_padding != 1 or self.pool != 2:
            raise ParameterError("only 3x3x3 kernels, padding 1 and pooling 2 are supported")
        if not self.conv_channels:
            raise ParameterError("at least one conv block is required")
        if any(c <= 0 for c in self.conv_channels + self.fc_widths) or self.input_channels <= 0 \
                or self.output_dim <= 0:
            raise ParameterError("channel counts and widths must be positive")
        if self.input_resolution <= 0 or self.input_resolution % (2 ** len(self.conv_channels)):
            raise ParameterError(f"resolution {self.input_resolution} is not divisible by "
                                 f"2^{len(self.conv_channels)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["fc_widths"] = list(self.fc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ParameterError(f"invalid network config: {exc}") from exc

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def full_config() -> NetworkConfig:
    return NetworkConfig(64, 6, (48, 144, 432, 1296), (2048, 2048, 1024), 6)


def desk_config() -> NetworkConfig:
    return NetworkConfig()


def layer_shapes(config: NetworkConfig) -> list[tuple[str, tuple]]:
    """Output shape after each conv block (n, n, n, C) and each dense layer (width,)."""
    out = []
    n = config.input_resolution
    for i, c in enumerate(config.conv_channels):
        n //= 2
        out.append((f"conv{i}", (n, n, n, c)))
    out.append(("gap", (config.conv_channels[-1],)))
    for i, w in enumerate(config.fc_widths):
        out.append((f"fc{i}", (w,)))
    out.append(("out", (config.output_dim,)))
    return out


def parameter_count(config: NetworkConfig) -> list[tuple[str, int]]:
    """Weights-plus-bias count per conv and dense layer (batch-norm parameters excluded)."""
    out = []
    cin = config.input_channels
    for i, c in enumerate(config.conv_channels):
        out.append((f"conv{i}", c * (cin * 27 + 1)))
        cin = c
    for i, w in enumerate(config.fc_widths):
        out.append((f"fc{i}", w * (cin + 1)))
        cin = w
    out.append(("out", config.output_dim * (cin + 1)))
    return out


def batchnorm_parameter_count(config: NetworkConfig) -> int:
    return 2 * sum(config.conv_channels)


def _dense_names(config):
    return [f"fc{i}" for i in range(len(config.fc_widths))] + ["out"]


@dataclass
class Network:
    config: NetworkConfig
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    dtype: type = np.float64

    @classmethod
    def create(cls, config: NetworkConfig, rng: Optional[np.random.Generator] = None,
               dtype=np.float64) -> "Network":
        """Glorot-uniform weights, zero biases, unit gains, zero offsets."""
        rng = np.random.default_rng(0) if rng is None else rng
        net = cls(config, {}, {}, dtype)
        cin = config.input_channels
        for i, c in enumerate(config.conv_channels):
            fan_in, fan_out = 27 * cin, 27 * c
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            net.params[f"conv{i}.weight"] = rng.uniform(-lim, lim, (c, cin, 3, 3, 3)).astype(dtype)
            net.params[f"conv{i}.bias"] = np.zeros(c, dtype)
            net.params[f"bn{i}.gain"] = np.ones(c, dtype)
            net.params[f"bn{i}.offset"] = np.zeros(c, dtype)
            net.buffers[f"bn{i}.running_mean"] = np.zeros(c, dtype)
            net.buffers[f"bn{i}.running_var"] = np.ones(c, dtype)
            cin = c
        widths = list(config.fc_widths) + [config.output_dim]
        for name, w in zip(_dense_names(config), widths):
            lim = np.sqrt(6.0 / (cin + w))
            net.params[f"{name}.weight"] = rng.uniform(-lim, lim, (w, cin)).astype(dtype)
            net.params[f"{name}.bias"] = np.zeros(w, dtype)
            cin = w
        return net

    def copy(self) -> "Network":
        return Network(self.config, {k: v.copy() for k, v in self.params.items()},
                       {k: v.copy() for k, v in self.buffers.items()}, self.dtype)

    def astype(self, dtype) -> "Network":
        return Network(self.config, {k: v.astype(dtype) for k, v in self.params.items()},
                       {k: v.astype(dtype) for k, v in self.buffers.items()}, dtype)

    def _check_input(self, x):
        x = np.asarray(x)
        n = self.config.input_resolution
        expect = (self.config.input_channels, n, n, n)
        if x.ndim == 4:
            x = x[None]
        if x.ndim != 5 or x.shape[1:] != expect:
            raise ParameterError(f"input shape {x.shape} does not match (batch,) + {expect}")
        return np.ascontiguousarray(np.moveaxis(x, 1, -1), dtype=self.dtype)

    def forward(self, x, training: bool = False, return_cache: bool = False):
        """Input (B, 6, n, n, n) or (6, n, n, n) channels-first; output (B, 6)."""
        h = self._check_input(x)
        p = self.params
        caches = []
        for i in range(len(self.config.conv_channels)):
            h, c_conv = L.conv_cl_forward(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"])
            h, c_bn = L.bn_forward(h, p[f"bn{i}.gain"], p[f"bn{i}.offset"],
                                   self.buffers[f"bn{i}.running_mean"], self.buffers[f"bn{i}.running_var"],
                                   training)
            h, c_relu = L.relu_forward(h)
            h, c_pool = L.pool_cl_forward(h)
            caches.append((c_conv, c_bn, c_relu, c_pool))
        h, c_gap = L.gap_forward(h)
        dense = []
        names = _dense_names(self.config)
        for j, name in enumerate(names):
            h, c_lin = L.linear_forward(h, p[f"{name}.weight"], p[f"{name}.bias"])
            c_relu = None
            if j < len(names) - 1:
                h, c_relu = L.relu_forward(h)
            dense.append((c_lin, c_relu))
        if return_cache:
            return h, (caches, c_gap, dense)
        return h

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 4:
            x = x[None]
        outs = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def loss_and_grad(self, x, y, training: bool = True):
        """MSE loss and gradients of every learnable parameter."""
        pred, (caches, c_gap, dense) = self.forward(x, training=training, return_cache=True)
        y = np.asarray(y, dtype=self.dtype).reshape(pred.shape)
        loss, d = L.mse_loss(pred, y)
        d = d.astype(self.dtype)
        grads = {}
        names = _dense_names(self.config)
        for name, (c_lin, c_relu) in zip(reversed(names), reversed(dense)):
            if c_relu is not None:
                d = L.relu_backward(d, c_relu)
            d, grads[f"{name}.weight"], grads[f"{name}.bias"] = L.linear_backward(d, c_lin, self.params[f"{name}.weight"])
        d = L.gap_backward(d, c_gap)
        for i in reversed(range(len(self.config.conv_channels))):
            c_conv, c_bn, c_relu, c_pool = caches[i]
            d = L.pool_cl_backward(d, c_pool)
            d = L.relu_backward(d, c_relu)
            d, grads[f"bn{i}.gain"], grads[f"bn{i}.offset"] = L.bn_backward(d, c_bn)
            d, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = L.conv_cl_backward(d, c_conv, need_dx=i > 0)
        return loss, grads

    def loss(self, x, y, training: bool = False) -> float:
        pred = self.forward(x, training=training)
        return L.mse_loss(pred, np.asarray(y, dtype=self.dtype).reshape(pred.shape))[0]


def forward(model: Network, x, training: bool = False):
    return model.forward(x, training=training)


def backward(model: Network, x, y):
    """(loss, gradients) for a batch in training mode."""
    return model.loss_and_grad(x, y, training=True)
