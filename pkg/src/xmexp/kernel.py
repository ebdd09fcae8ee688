"""Small differentiable layer kernel on top of numpy.

Tensors are plain float64 ``numpy.ndarray`` objects laid out ``[C, H, W]`` for
feature maps and ``[N]`` for vectors. There is no autodiff graph: every layer
returns a cache from ``forward`` and consumes it again in ``backward``, so the
same layer can be applied several times in one step (the decoders are).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, StateError

DTYPE = np.float64


class Parameter:
    """A trainable array with its gradient accumulator."""

    def __init__(self, value: np.ndarray, kind: str, name: str = ""):
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.kind = kind
        self.name = name
        self.has_grad = False

    def accumulate(self, g: np.ndarray) -> None:
        self.grad += g
        self.has_grad = True

    def zero_grad(self) -> None:
        self.grad.fill(0.0)
        self.has_grad = False

    def __repr__(self) -> str:
        return f"Parameter({self.name or self.kind}, shape={self.value.shape})"


def glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


class Layer:
    """Base layer: stateless unless it owns parameters."""

    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, x: np.ndarray):
        raise NotImplementedError

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]


class Conv2D(Layer):
    """Stride-1 convolution via im2col + GEMM.

    Weights are ``(out_channels, in_channels, kH, kW)``. ``padding="same"``
    zero-pads by ``k // 2`` on each side and requires an odd kernel.
    """

    kind = "conv"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 padding: str = "same", rng: np.random.Generator | None = None):
        if padding not in ("same", "valid"):
            raise ConfigurationError(f"padding must be 'same' or 'valid', got {padding!r}")
        if padding == "same" and kernel_size % 2 == 0:
            raise ConfigurationError(f"'same' padding needs an odd kernel, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = padding
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        k2 = kernel_size * kernel_size
        self.weight = Parameter(glorot_uniform(rng, shape, in_channels * k2, out_channels * k2), "conv")
        self.bias = Parameter(np.zeros(out_channels), "conv")

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    @property
    def pad(self) -> int:
        return self.kernel_size // 2 if self.padding == "same" else 0

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise ConfigurationError(f"conv2d expects {self.in_channels} input channels, got {c} (input {shape})")
        k, p = self.kernel_size, self.pad
        if h + 2 * p < k or w + 2 * p < k:
            raise ConfigurationError(f"kernel {k}x{k} does not fit padded input {h + 2 * p}x{w + 2 * p}")
        return (self.out_channels, h + 2 * p - k + 1, w + 2 * p - k + 1)

    def forward(self, x):
        _, ho, wo = self.output_shape(x.shape)
        p, k = self.pad, self.kernel_size
        xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
        # (C, Ho, Wo, k, k) -> (Ho*Wo, C*k*k)
        cols = sliding_window_view(xp, (k, k), axis=(1, 2)).transpose(1, 2, 0, 3, 4).reshape(ho * wo, -1)
        wm = self.weight.value.reshape(self.out_channels, -1)
        y = (cols @ wm.T + self.bias.value).T.reshape(self.out_channels, ho, wo)
        return y, (x.shape, cols)

    def backward(self, cache, dy):
        in_shape, cols = cache
        c, h, w = in_shape
        o, ho, wo = dy.shape
        p, k = self.pad, self.kernel_size
        dym = dy.reshape(o, -1)
        self.weight.accumulate((dym @ cols).reshape(self.weight.value.shape))
        self.bias.accumulate(dym.sum(axis=1))
        dcols = (dym.T @ self.weight.value.reshape(o, -1)).reshape(ho, wo, c, k, k)
        dxp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=DTYPE)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + ho, j:j + wo] += dcols[:, :, :, i, j].transpose(2, 0, 1)
        return dxp[:, p:p + h, p:p + w] if p else dxp


class Dense(Layer):
    """Fully connected layer, ``y = W x + b`` with ``W`` of shape ``(out, in)``."""

    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim), "dense")
        self.bias = Parameter(np.zeros(out_dim), "dense")

    def parameters(self):
        return [self.weight, self.bias]

    def output_shape(self, shape):
        if shape != (self.in_dim,):
            raise ConfigurationError(f"dense expects input ({self.in_dim},), got {shape}")
        return (self.out_dim,)

    def forward(self, x):
        self.output_shape(x.shape)
        return self.weight.value @ x + self.bias.value, x

    def backward(self, cache, dy):
        x = cache
        self.weight.accumulate(np.outer(dy, x))
        self.bias.accumulate(dy)
        return self.weight.value.T @ dy


class MaxPool2x2(Layer):
    """2x2 max pooling in ceil mode; odd edges are padded with -inf.

    Ties go to the first position in row-major order within the window.
    """

    def output_shape(self, shape):
        c, h, w = shape
        if h < 1 or w < 1:
            raise ConfigurationError(f"maxpool2x2 needs a non-empty input, got {shape}")
        return (c, -(-h // 2), -(-w // 2))

    def forward(self, x):
        c, ho, wo = self.output_shape(x.shape)
        h, w = x.shape[1:]
        xp = np.full((c, 2 * ho, 2 * wo), -np.inf, dtype=DTYPE)
        xp[:, :h, :w] = x
        # window order (0,0),(0,1),(1,0),(1,1) is row-major inside each block
        blocks = xp.reshape(c, ho, 2, wo, 2).transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, 4)
        arg = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return y, (x.shape, arg)

    def backward(self, cache, dy):
        (c, h, w), arg = cache
        ho, wo = dy.shape[1:]
        blocks = np.zeros((c, ho, wo, 4), dtype=DTYPE)
        np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
        dxp = blocks.reshape(c, ho, wo, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * ho, 2 * wo)
        return dxp[:, :h, :w]


class Upsample2x(Layer):
    """Nearest-neighbour upsampling by 2 along both spatial axes."""

    def output_shape(self, shape):
        c, h, w = shape
        return (c, 2 * h, 2 * w)

    def forward(self, x):
        return x.repeat(2, axis=1).repeat(2, axis=2), None

    def backward(self, cache, dy):
        c, h2, w2 = dy.shape
        return dy.reshape(c, h2 // 2, 2, w2 // 2, 2).sum(axis=(2, 4))


class Crop(Layer):
    """Keep the leading ``height`` rows and ``width`` columns."""

    def __init__(self, height: int, width: int):
        self.height = height
        self.width = width

    def output_shape(self, shape):
        c, h, w = shape
        if h < self.height or w < self.width:
            raise ConfigurationError(f"cannot crop {shape} to {self.height}x{self.width}")
        return (c, self.height, self.width)

    def forward(self, x):
        self.output_shape(x.shape)
        return x[:, :self.height, :self.width], x.shape

    def backward(self, cache, dy):
        dx = np.zeros(cache, dtype=DTYPE)
        dx[:, :self.height, :self.width] = dy
        return dx


class Reshape(Layer):
    def __init__(self, shape: tuple):
        self.shape = tuple(shape)

    def output_shape(self, shape):
        if int(np.prod(shape)) != int(np.prod(self.shape)):
            raise ConfigurationError(f"cannot reshape {shape} to {self.shape}")
        return self.shape

    def forward(self, x):
        self.output_shape(x.shape)
        return x.reshape(self.shape), x.shape

    def backward(self, cache, dy):
        return dy.reshape(cache)


class Flatten(Layer):
    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return x.reshape(-1), x.shape

    def backward(self, cache, dy):
        return dy.reshape(cache)


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, cache, dy):
        return dy * cache


class Sigmoid(Layer):
    def forward(self, x):
        # split by sign so exp never overflows
        y = np.empty_like(x, dtype=DTYPE)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        return y, y

    def backward(self, cache, dy):
        return dy * cache * (1.0 - cache)


class Sequential(Layer):
    """A fixed chain of layers; the only graph structure the model needs."""

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def param_layers(self) -> list[Layer]:
        return [layer for layer in self.layers if layer.parameters()]

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def trace(self, shape) -> list[tuple]:
        """Shapes after every layer, starting with ``shape``."""
        out = [tuple(shape)]
        for layer in self.layers:
            out.append(layer.output_shape(out[-1]))
        return out

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, cache, dy):
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            dy = layer.backward(c, dy)
        return dy


# functional forms, forward only

def conv2d(x, weight, bias, padding="same"):
    layer = Conv2D(weight.shape[1], weight.shape[0], weight.shape[2], padding)
    if weight.shape[2] != weight.shape[3]:
        raise ConfigurationError(f"only square kernels are supported, got {weight.shape}")
    layer.weight.value[...] = weight
    layer.bias.value[...] = bias
    return layer(np.asarray(x, dtype=DTYPE))


def dense(x, weight, bias):
    layer = Dense(weight.shape[1], weight.shape[0])
    layer.weight.value[...] = weight
    layer.bias.value[...] = bias
    return layer(np.asarray(x, dtype=DTYPE))


def maxpool2x2(x):
    return MaxPool2x2()(np.asarray(x, dtype=DTYPE))


def upsample2x(x):
    return Upsample2x()(np.asarray(x, dtype=DTYPE))


def relu(x):
    return ReLU()(np.asarray(x, dtype=DTYPE))


def sigmoid(x):
    return Sigmoid()(np.asarray(x, dtype=DTYPE))


def sgd_step(params: Iterable[Parameter], learning_rate: float) -> None:
    """Plain SGD update followed by zeroing the accumulators."""
    params = list(params)
    missing = [p for p in params if not p.has_grad]
    if missing:
        raise StateError(f"sgd_step before backward: no gradient for {missing[0]!r}")
    for p in params:
        p.value -= learning_rate * p.grad
        p.zero_grad()


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


# gradient checking

@dataclass
class GradcheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = []
        for name, err in self.errors.items():
            status = "ok" if err < self.tolerance else "FAIL"
            out.append(f"{name}: max_rel_err={err:.3e} {status}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / (|a| + |n|)``, with the denominator floored for near-zero gradients."""
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def gradcheck(loss_fn: Callable[[bool], float],
              blocks: Sequence[tuple[str, np.ndarray, Callable[[], np.ndarray]]],
              eps: float = 1e-5, tolerance: float = 1e-4,
              max_entries: int | None = 24, seed: int = 0) -> GradcheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn(True)`` must compute the loss and populate the analytic
    gradients; ``loss_fn(False)`` only computes the loss. ``blocks`` holds
    ``(name, array, get_grad)`` triples where ``array`` is perturbed in place.
    At most ``max_entries`` randomly chosen entries per block are probed.
    """
    if eps <= 0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    rng = np.random.default_rng(seed)
    loss_fn(True)
    analytic = {name: np.array(get_grad(), dtype=DTYPE, copy=True) for name, _, get_grad in blocks}
    report = GradcheckReport(tolerance)
    for name, array, _ in blocks:
        flat = array.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_entries is None or n <= max_entries else rng.choice(n, max_entries, replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn(False)
            flat[i] = orig - eps
            down = loss_fn(False)
            flat[i] = orig
            numeric[j] = (up - down) / (2 * eps)
        report.errors[name] = float(relative_error(analytic[name].reshape(-1)[idx], numeric).max())
    return report


def layer_gradcheck(layer: Layer, x: np.ndarray, eps: float = 1e-5, tolerance: float = 1e-4,
                    max_entries: int | None = 24, seed: int = 0, prefix: str = "") -> GradcheckReport:
    """Gradcheck ``sum(r * layer(x))`` for a fixed random ``r`` against every parameter and the input."""
    x = np.array(x, dtype=DTYPE, copy=True)
    out = layer(x)
    r = np.random.default_rng(seed + 1).standard_normal(out.shape)
    dx_holder = {}

    def loss_fn(with_grad: bool) -> float:
        y, cache = layer.forward(x)
        if with_grad:
            zero_grads(layer.parameters())
            dx_holder["dx"] = layer.backward(cache, r)
        return float(np.sum(r * y))

    blocks = [(f"{prefix}input", x, lambda: dx_holder["dx"])]
    for k, p in enumerate(layer.parameters()):
        role = "weight" if k % 2 == 0 else "bias"
        blocks.append((f"{prefix}{p.name or p.kind}.{k // 2}.{role}", p.value, lambda p=p: p.grad))
    report = gradcheck(loss_fn, blocks, eps, tolerance, max_entries, seed)
    zero_grads(layer.parameters())
    return report
