"""Differentiable building blocks for the desaturation network.

All blocks accept a batched (B, C, T) or single (C, T) time-series layout and
keep time on the last axis. Parameters are plain ``Tensor`` leaves created
with deterministic generators passed in by the caller; nothing here touches
global random state.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; caller gates on training mode."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


class Linear:
    """Affine map with weight (out, in) and optional bias."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True):
        self.n_in = n_in
        self.n_out = n_out
        self.weight = Tensor(kaiming_uniform(rng, (n_out, n_in), n_in), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    def rows(self, x: Tensor) -> Tensor:
        """Apply to row features: (..., in) -> (..., out)."""
        x = ad._wrap(x)
        vec = x.ndim == 1
        if vec:
            x = ad.reshape(x, (1, -1))
        out = ad.matmul(x, ad.transpose(self.weight))
        if self.bias is not None:
            out = out + self.bias
        return ad.reshape(out, (self.n_out,)) if vec else out

    def channels(self, x: Tensor) -> Tensor:
        """Apply per time step to channel features: (..., in, T) -> (..., out, T)."""
        out = ad.matmul(self.weight, x)
        if self.bias is not None:
            out = out + ad.reshape(self.bias, (self.n_out, 1))
        return out

    def params(self):
        yield "weight", self.weight
        if self.bias is not None:
            yield "bias", self.bias


class CausalConv:
    """Weight-normalized dilated causal convolution.

    The effective kernel is v * (g / ||v||) with one scale g per output
    filter; g starts at ||v|| so the initial kernel equals v.
    """

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int,
                 kernel_size: int, dilation: int):
        if kernel_size < 1:
            raise ShapeError("kernel_size must be >= 1")
        self.dilation = dilation
        v = kaiming_uniform(rng, (c_out, c_in, kernel_size), c_in * kernel_size)
        self.v = Tensor(v, requires_grad=True)
        self.g = Tensor(np.sqrt((v * v).sum(axis=(1, 2))), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)

    def kernel(self) -> Tensor:
        norm = ad.sqrt(ad.tsum(self.v * self.v, axis=(1, 2), keepdims=True))
        return self.v * (ad.reshape(self.g, (-1, 1, 1)) / norm)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d_causal(x, self.kernel(), self.bias, dilation=self.dilation)

    def params(self):
        yield "v", self.v
        yield "g", self.g
        yield "bias", self.bias


class TcnBlock:
    """Residual block: relu(conv) -> relu(conv) -> + skip.

    Dropout follows each activation in training mode. A 1x1 projection maps
    the skip path when the channel count changes; otherwise the input is
    added unchanged, so a zero-weight block is an identity.
    """

    def __init__(self, rng: np.random.Generator, c_in: int, filters: int,
                 kernel_size: int, dilation: int, drop_rate: float):
        self.drop_rate = drop_rate
        self.conv1 = CausalConv(rng, c_in, filters, kernel_size, dilation)
        self.conv2 = CausalConv(rng, filters, filters, kernel_size, dilation)
        self.proj = Linear(rng, c_in, filters, bias=False) if c_in != filters else None

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        h = ad.relu(self.conv1(x))
        if training and rng is not None:
            h = dropout(h, self.drop_rate, rng)
        h = ad.relu(self.conv2(h))
        if training and rng is not None:
            h = dropout(h, self.drop_rate, rng)
        skip = self.proj.channels(x) if self.proj is not None else x
        return h + skip

    def params(self):
        for n, p in self.conv1.params():
            yield f"conv1.{n}", p
        for n, p in self.conv2.params():
            yield f"conv2.{n}", p
        if self.proj is not None:
            for n, p in self.proj.params():
                yield f"proj.{n}", p


class TcnStack:
    """Stacked residual blocks with fixed increasing dilations."""

    def __init__(self, rng: np.random.Generator, c_in: int, filters: int,
                 kernel_size: int = 3, dilations=(2, 4, 8), drop_rate: float = 0.2):
        self.dilations = tuple(dilations)
        self.kernel_size = kernel_size
        self.blocks = []
        c = c_in
        for d in self.dilations:
            self.blocks.append(TcnBlock(rng, c, filters, kernel_size, d, drop_rate))
            c = filters

    @property
    def receptive_field(self) -> int:
        # two convs per block, each reaching (K-1)*d steps back
        return 1 + sum(2 * (self.kernel_size - 1) * d for d in self.dilations)

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        h = x
        for block in self.blocks:
            h = block(h, training=training, rng=rng)
        return h

    def encode(self, x: Tensor, training: bool = False,
               rng: np.random.Generator | None = None):
        """Full hidden sequence plus its final time step."""
        hidden = self(x, training=training, rng=rng)
        return hidden, hidden[..., -1]

    def params(self):
        for i, block in enumerate(self.blocks):
            for n, p in block.params():
                yield f"block{i}.{n}", p


class MemoryBank:
    """Global memory: rewrite each step as an attention mix of basis rows.

    For step vector x, weights are softmax(bank @ x) over the basis rows and
    the output is the weighted sum of rows, so every output column lies in
    the convex hull of the basis.
    """

    def __init__(self, rng: np.random.Generator, n_basis: int, n_channels: int,
                 init_scale: float = 0.1):
        if n_basis < 1:
            raise ShapeError("memory needs at least one basis row")
        self.n_channels = n_channels
        self.bank = Tensor(rng.normal(0.0, init_scale, size=(n_basis, n_channels)),
                           requires_grad=True)

    def encode(self, x: Tensor, return_alpha: bool = False):
        if x.shape[-2] != self.n_channels:
            raise ShapeError(f"expected {self.n_channels} channels, got {x.shape[-2]}")
        scores = ad.matmul(self.bank, x)
        alpha = ad.softmax(scores, axis=-2)
        out = ad.matmul(ad.transpose(self.bank), alpha)
        return (out, alpha) if return_alpha else out

    def params(self):
        yield "bank", self.bank


class FcBlock:
    """One hidden layer with ReLU, then a linear output layer."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_hidden: int, n_out: int):
        self.fc1 = Linear(rng, n_in, n_hidden)
        self.fc2 = Linear(rng, n_hidden, n_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2.rows(ad.relu(self.fc1.rows(x)))

    def params(self):
        for n, p in self.fc1.params():
            yield f"fc1.{n}", p
        for n, p in self.fc2.params():
            yield f"fc2.{n}", p
