"""Parameterized layers composed from the autodiff primitives.

Weight initialization is fan-in-scaled uniform, U(-1/sqrt(fan_in), +...);
biases start at zero except LSTM forget gates (+1). Gate order in all LSTM
variants is (input, forget, cell, output).

The residual torso follows the project's normative block: a channel-changing
plain conv first, then blocks computing ``x + relu(bn(conv(x)))`` with 3x3
kernels and same padding.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    def named_parameters(self, prefix: str = ""):
        out = []
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((prefix + key, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(f"{prefix}{key}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        out = []
        for key, val in vars(self).items():
            if isinstance(val, Module):
                out.extend(val.named_buffers(f"{prefix}{key}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_buffers(f"{prefix}{key}.{i}."))
            elif isinstance(val, dict) and key == "buffers":
                for name, arr in val.items():
                    out.append((prefix + name, arr))
        return out


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(T.default_dtype())


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.w = Tensor(_uniform(rng, (n_in, n_out), n_in), requires_grad=True)
        self.b = Tensor(np.zeros(n_out, dtype=T.default_dtype()), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.w.shape[0]:
            raise ValueError(f"fully_connected: input {x.shape} vs weights {self.w.shape}")
        y = T.matmul(x, self.w)
        return T.add(y, self.b) if self.b is not None else y


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: int = 3, bias: bool = True):
        fan_in = kernel * kernel * c_in
        self.w = Tensor(_uniform(rng, (kernel, kernel, c_in, c_out), fan_in), requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=T.default_dtype()), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.w)
        return T.add(y, self.b) if self.b is not None else y


class BatchNorm2d(Module):
    """Per-channel normalization over (batch, height, width).

    Training mode uses batch statistics and updates the running buffers;
    evaluation mode applies the running statistics.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        dt = T.default_dtype()
        self.gamma = Tensor(np.ones(channels, dtype=dt), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dt), requires_grad=True)
        self.momentum = momentum
        self.eps = eps
        self.buffers = {
            "running_mean": np.zeros(channels, dtype=np.float64),
            "running_var": np.ones(channels, dtype=np.float64),
        }

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            mean = T.mean_axes(x, (0, 1, 2))
            var = T.mean_axes(T.square(T.sub(x, mean)), (0, 1, 2))
            m = self.momentum
            self.buffers["running_mean"] *= 1 - m
            self.buffers["running_mean"] += m * mean.data.reshape(-1)
            self.buffers["running_var"] *= 1 - m
            self.buffers["running_var"] += m * var.data.reshape(-1)
            xhat = T.div(T.sub(x, mean), T.sqrt(T.add(var, self.eps)))
        else:
            dt = x.dtype
            mean = self.buffers["running_mean"].astype(dt).reshape(1, 1, 1, -1)
            std = np.sqrt(self.buffers["running_var"] + self.eps).astype(dt).reshape(1, 1, 1, -1)
            xhat = T.div(T.sub(x, Tensor(mean)), Tensor(std))
        return T.add(T.mul(xhat, self.gamma), self.beta)


class ResidualTorso(Module):
    """N conv layers, 3x3, same padding; skip connections after the first."""

    def __init__(self, c_in: int, channels: int, rng: np.random.Generator,
                 n_layers: int = 5, batch_norm: bool = True):
        self.entry = Conv2d(c_in, channels, rng, bias=not batch_norm)
        self.entry_bn = BatchNorm2d(channels) if batch_norm else None
        self.convs = [Conv2d(channels, channels, rng, bias=not batch_norm)
                      for _ in range(n_layers - 1)]
        self.bns = [BatchNorm2d(channels) for _ in range(n_layers - 1)] if batch_norm else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = self.entry(x)
        if self.entry_bn is not None:
            h = self.entry_bn(h, training)
        h = T.relu(h)
        for i, conv in enumerate(self.convs):
            y = conv(h)
            if self.bns is not None:
                y = self.bns[i](y, training)
            h = T.add(h, T.relu(y))
        return h


def _gates(z: Tensor, n: int):
    i = T.slice_last(z, 0, n)
    f = T.slice_last(z, n, 2 * n)
    g = T.slice_last(z, 2 * n, 3 * n)
    o = T.slice_last(z, 3 * n, 4 * n)
    return i, f, g, o


class LSTMCell(Module):
    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        self.n_hidden = n_hidden
        self.wx = Tensor(_uniform(rng, (n_in, 4 * n_hidden), n_in), requires_grad=True)
        self.wh = Tensor(_uniform(rng, (n_hidden, 4 * n_hidden), n_hidden), requires_grad=True)
        bias = np.zeros(4 * n_hidden, dtype=T.default_dtype())
        bias[n_hidden:2 * n_hidden] = 1.0  # forget-gate bias
        self.b = Tensor(bias, requires_grad=True)

    def gates_from_input(self, x: Tensor) -> Tensor:
        """Input contribution to the gates; hoistable out of the time loop."""
        return T.add(T.matmul(x, self.wx), self.b)

    def step_from_gates(self, zx: Tensor, h: Optional[Tensor], c: Optional[Tensor]):
        z = T.add(zx, T.matmul(h, self.wh)) if h is not None else zx
        i, f, g, o = _gates(z, self.n_hidden)
        new_c = T.mul(T.sigmoid(i), T.tanh(g))
        if c is not None:
            new_c = T.add(T.mul(T.sigmoid(f), c), new_c)
        new_h = T.mul(T.sigmoid(o), T.tanh(new_c))
        return new_h, new_c

    def step(self, x: Tensor, h: Optional[Tensor], c: Optional[Tensor]):
        """One update. ``h``/``c`` of None mean an exact zero state, letting
        the hidden matmul be skipped (used for length-1 sequences)."""
        return self.step_from_gates(self.gates_from_input(x), h, c)


class ConvLSTMCell(Module):
    """Convolutional LSTM with 3x3 kernels over an (B, H, W, C) state."""

    def __init__(self, c_in: int, channels: int, rng: np.random.Generator, kernel: int = 3):
        self.channels = channels
        fan_x = kernel * kernel * c_in
        fan_h = kernel * kernel * channels
        self.wx = Tensor(_uniform(rng, (kernel, kernel, c_in, 4 * channels), fan_x), requires_grad=True)
        self.wh = Tensor(_uniform(rng, (kernel, kernel, channels, 4 * channels), fan_h), requires_grad=True)
        bias = np.zeros(4 * channels, dtype=T.default_dtype())
        bias[channels:2 * channels] = 1.0
        self.b = Tensor(bias, requires_grad=True)

    def gates_from_input(self, x: Tensor) -> Tensor:
        return T.add(T.conv2d(x, self.wx), self.b)

    def step_from_gates(self, zx: Tensor, h: Optional[Tensor], c: Optional[Tensor]):
        z = T.add(zx, T.conv2d(h, self.wh)) if h is not None else zx
        i, f, g, o = _gates(z, self.channels)
        new_c = T.mul(T.sigmoid(i), T.tanh(g))
        if c is not None:
            new_c = T.add(T.mul(T.sigmoid(f), c), new_c)
        new_h = T.mul(T.sigmoid(o), T.tanh(new_c))
        return new_h, new_c

    def step(self, x: Tensor, h: Optional[Tensor], c: Optional[Tensor]):
        return self.step_from_gates(self.gates_from_input(x), h, c)
