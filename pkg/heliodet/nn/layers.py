"""
Layer kinds for the detector backbone

Tensors are float32 numpy arrays. Layers work on batches: conv/pool take
(N, C, H, W), linear takes (N, F). The functional forms (conv2d, maxpool2d,
leaky_relu, linear) also accept a single unbatched sample.

Each layer caches what its backward pass needs during forward(); calling
backward() without a preceding forward() raises NetworkStateError.
"""

from typing import Dict, Optional, Tuple
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from heliodet.exceptions import ArgumentError, NetworkStateError, ShapeError

DTYPE = np.float32


def _output_dim(size: int, kernel: int, stride: int, pad: int, layer: str) -> int:
    span = size + 2 * pad - kernel
    if span < 0 or span % stride != 0:
        raise ShapeError(
            layer,
            f"input size {size} with kernel {kernel}, stride {stride}, pad {pad} "
            f"does not give an integral output size",
        )
    return span // stride + 1


def _conv_windows(x: np.ndarray, kernel: Tuple[int, int], stride: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C, H', W', kH, kW) view of the padded input"""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(x, kernel, axis=(2, 3))
    return windows[:, :, ::stride, ::stride]


def conv2d(
    input: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    pad: int = 0,
    name: str = "conv2d"
) -> np.ndarray:
    """
    2D cross-correlation plus bias

    Args:
        input: (C_in, H, W) or (N, C_in, H, W)
        weights: (C_out, C_in, kH, kW)
        bias: (C_out,)
        stride: Step between windows
        pad: Zero padding on every side

    Returns:
        (C_out, H', W') or (N, C_out, H', W')

    Raises:
        ShapeError: Channel mismatch or non-integral output size
    """
    unbatched = input.ndim == 3
    x = input[None] if unbatched else input
    if x.ndim != 4:
        raise ShapeError(name, f"expected (N, C, H, W) input, got shape {input.shape}")
    c_out, c_in, kh, kw = weights.shape
    if x.shape[1] != c_in:
        raise ShapeError(name, f"input has {x.shape[1]} channels, weights expect {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(name, f"bias shape {bias.shape} does not match {c_out} output channels")
    _output_dim(x.shape[2], kh, stride, pad, name)
    _output_dim(x.shape[3], kw, stride, pad, name)

    windows = _conv_windows(x, (kh, kw), stride, pad)
    out = np.tensordot(windows, weights, axes=([1, 4, 5], [1, 2, 3]))  # (N, H', W', C_out)
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=DTYPE)
    return out[0] if unbatched else out


def maxpool2d(input: np.ndarray, size: int, stride: int, name: str = "maxpool2d") -> np.ndarray:
    """Channelwise max over size x size windows"""
    unbatched = input.ndim == 3
    x = input[None] if unbatched else input
    out, _ = _maxpool_forward(x, size, stride, name)
    return out[0] if unbatched else out


def _maxpool_forward(x: np.ndarray, size: int, stride: int, name: str) -> Tuple[np.ndarray, np.ndarray]:
    if x.ndim != 4:
        raise ShapeError(name, f"expected (N, C, H, W) input, got shape {x.shape}")
    _output_dim(x.shape[2], size, stride, 0, name)
    _output_dim(x.shape[3], size, stride, 0, name)
    windows = _conv_windows(x, (size, size), stride, 0)
    flat = windows.reshape(windows.shape[:4] + (size * size,))
    # argmax returns the first occurrence, which routes ties deterministically
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out, dtype=DTYPE), arg


def leaky_relu(input: np.ndarray, slope: float = 0.1) -> np.ndarray:
    """x if x >= 0 else slope * x"""
    return np.where(input >= 0, input, input * DTYPE(slope)).astype(DTYPE, copy=False)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function (dtype preserved)"""
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def linear(input: np.ndarray, weights: np.ndarray, bias: np.ndarray, name: str = "linear") -> np.ndarray:
    """
    Fully connected layer y = W x + b

    Args:
        input: (F_in,) or (N, F_in)
        weights: (F_out, F_in)
        bias: (F_out,)
    """
    unbatched = input.ndim == 1
    x = input[None] if unbatched else input
    if x.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ShapeError(name, f"input shape {input.shape} does not match weights {weights.shape}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(name, f"bias shape {bias.shape} does not match weights {weights.shape}")
    out = (x @ weights.T + bias).astype(DTYPE, copy=False)
    return out[0] if unbatched else out


class Layer:
    """Base layer: parameters and gradients are dicts of float32 arrays"""

    kind = "layer"

    def __init__(self, name: Optional[str] = None):
        self.name = name or self.kind
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self._cache = None

    def output_shape(self, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        """Per-sample output shape for a per-sample input shape"""
        raise NotImplementedError

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _require_cache(self):
        if self._cache is None:
            raise NetworkStateError(f"{self.name}: backward() called without a cached forward pass")
        return self._cache

    def zero_grads(self):
        for key, value in self.params.items():
            self.grads[key] = np.zeros_like(value)

    def spec_params(self) -> Dict[str, object]:
        """Constructor arguments, for the weights header"""
        return {}


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 stride: int = 1, pad: int = 0, name: Optional[str] = None):
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        self.params = {
            "weight": np.zeros((out_channels, in_channels, kernel, kernel), dtype=DTYPE),
            "bias": np.zeros((out_channels,), dtype=DTYPE),
        }
        self.zero_grads()

    def init_params(self, rng: np.random.Generator):
        # Kaiming-uniform on fan-in
        fan_in = self.in_channels * self.kernel * self.kernel
        bound = math.sqrt(6.0 / fan_in)
        self.params["weight"][...] = rng.uniform(-bound, bound, self.params["weight"].shape)
        self.params["bias"][...] = 0.0

    def output_shape(self, input_shape):
        c, h, w = input_shape
        if c != self.in_channels:
            raise ShapeError(self.name, f"input has {c} channels, layer expects {self.in_channels}")
        return (
            self.out_channels,
            _output_dim(h, self.kernel, self.stride, self.pad, self.name),
            _output_dim(w, self.kernel, self.stride, self.pad, self.name),
        )

    def forward(self, x, cache=True):
        out = conv2d(x, self.params["weight"], self.params["bias"], self.stride, self.pad, self.name)
        if cache:
            self._cache = x
        return out

    def backward(self, grad_out):
        x = self._require_cache()
        weight = self.params["weight"]
        k, s, p = self.kernel, self.stride, self.pad
        windows = _conv_windows(x, (k, k), s, p)  # (N, C, H', W', k, k)

        self.grads["weight"] = np.tensordot(grad_out, windows, axes=([0, 2, 3], [0, 2, 3])).astype(DTYPE)
        self.grads["bias"] = grad_out.sum(axis=(0, 2, 3)).astype(DTYPE)

        n, _, h_out, w_out = grad_out.shape
        padded = np.zeros((n, x.shape[1], x.shape[2] + 2 * p, x.shape[3] + 2 * p), dtype=DTYPE)
        for i in range(k):
            for j in range(k):
                # (N, O, H', W') x (O, C) -> (N, H', W', C)
                contrib = np.tensordot(grad_out, weight[:, :, i, j], axes=([1], [0]))
                padded[:, :, i:i + s * h_out:s, j:j + s * w_out:s] += contrib.transpose(0, 3, 1, 2)
        if p:
            padded = padded[:, :, p:-p, p:-p]
        return np.ascontiguousarray(padded)

    def spec_params(self):
        return {"out_channels": self.out_channels, "kernel": self.kernel,
                "stride": self.stride, "pad": self.pad}


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, size: int = 2, stride: Optional[int] = None, name: Optional[str] = None):
        super().__init__(name)
        self.size = size
        self.stride = stride or size

    def output_shape(self, input_shape):
        c, h, w = input_shape
        return (
            c,
            _output_dim(h, self.size, self.stride, 0, self.name),
            _output_dim(w, self.size, self.stride, 0, self.name),
        )

    def forward(self, x, cache=True):
        out, arg = _maxpool_forward(x, self.size, self.stride, self.name)
        if cache:
            self._cache = (x.shape, arg)
        return out

    def backward(self, grad_out):
        shape, arg = self._require_cache()
        n, c, h_out, w_out = grad_out.shape
        rows = (np.arange(h_out) * self.stride)[None, None, :, None] + arg // self.size
        cols = (np.arange(w_out) * self.stride)[None, None, None, :] + arg % self.size
        grad_in = np.zeros(shape, dtype=DTYPE)
        nn_idx = np.arange(n)[:, None, None, None]
        cc_idx = np.arange(c)[None, :, None, None]
        # add.at accumulates when overlapping windows share an argmax
        np.add.at(grad_in, (nn_idx, cc_idx, rows, cols), grad_out)
        return grad_in

    def spec_params(self):
        return {"size": self.size, "stride": self.stride}


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, slope: float = 0.1, name: Optional[str] = None):
        super().__init__(name)
        if not 0.0 < slope < 1.0:
            raise ArgumentError(f"leaky slope must be in (0, 1), got {slope}")
        self.slope = slope

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x, cache=True):
        if cache:
            self._cache = x >= 0
        return leaky_relu(x, self.slope)

    def backward(self, grad_out):
        positive = self._require_cache()
        return np.where(positive, grad_out, grad_out * DTYPE(self.slope)).astype(DTYPE, copy=False)

    def spec_params(self):
        return {"slope": self.slope}


class Sigmoid(Layer):
    kind = "sigmoid"

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x, cache=True):
        out = sigmoid(x)
        if cache:
            self._cache = out
        return out

    def backward(self, grad_out):
        out = self._require_cache()
        return (grad_out * out * (1 - out)).astype(DTYPE, copy=False)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, cache=True):
        if cache:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        shape = self._require_cache()
        return grad_out.reshape(shape)


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features: int, out_features: int, name: Optional[str] = None):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "weight": np.zeros((out_features, in_features), dtype=DTYPE),
            "bias": np.zeros((out_features,), dtype=DTYPE),
        }
        self.zero_grads()

    def init_params(self, rng: np.random.Generator):
        bound = math.sqrt(6.0 / self.in_features)
        self.params["weight"][...] = rng.uniform(-bound, bound, self.params["weight"].shape)
        self.params["bias"][...] = 0.0

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.in_features,):
            raise ShapeError(self.name, f"input shape {tuple(input_shape)} does not match {self.in_features} features")
        return (self.out_features,)

    def forward(self, x, cache=True):
        out = linear(x, self.params["weight"], self.params["bias"], self.name)
        if cache:
            self._cache = x
        return out

    def backward(self, grad_out):
        x = self._require_cache()
        self.grads["weight"] = (grad_out.T @ x).astype(DTYPE)
        self.grads["bias"] = grad_out.sum(axis=0).astype(DTYPE)
        return (grad_out @ self.params["weight"]).astype(DTYPE, copy=False)

    def spec_params(self):
        return {"out_features": self.out_features}
