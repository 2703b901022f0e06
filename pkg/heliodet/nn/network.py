"""
Sequential network container and the HELIODET weights file

Weights file layout:
    8 bytes   magic b"HELIODET"
    1 byte    format version
    4 bytes   header length L (little-endian uint32)
    L bytes   UTF-8 JSON header: input shape, layer specs, parameter shapes,
              plus free-form metadata (effective config, seed)
    rest      little-endian float32 parameter blobs in declaration order
"""

from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union
import json
import logging
import struct

import numpy as np

from heliodet.exceptions import DatasetIOError, DecodeError, NetworkStateError, ShapeError
from heliodet.models.config_models import LayerSpec
from heliodet.nn.layers import DTYPE, Conv2d, Flatten, Layer, LeakyReLU, Linear, MaxPool2d, Sigmoid
from heliodet.utils.file_handler import save_file
from heliodet.utils.rng import derive_rng

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"HELIODET"
WEIGHTS_VERSION = 1


def layer_from_spec(spec: LayerSpec, input_shape: Tuple[int, ...], index: int) -> Layer:
    """Instantiate a layer for a per-sample input shape"""
    name = f"{index:02d}_{spec.kind}"
    if spec.kind == "conv2d":
        if len(input_shape) != 3:
            raise ShapeError(name, f"conv2d needs a (C, H, W) input, got {input_shape}")
        return Conv2d(input_shape[0], spec.out_channels, spec.kernel, spec.stride, spec.pad, name=name)
    if spec.kind == "maxpool2d":
        return MaxPool2d(spec.size, spec.stride, name=name)
    if spec.kind == "leaky_relu":
        return LeakyReLU(spec.slope, name=name)
    if spec.kind == "sigmoid":
        return Sigmoid(name=name)
    if spec.kind == "flatten":
        return Flatten(name=name)
    if spec.kind == "linear":
        if len(input_shape) != 1:
            raise ShapeError(name, f"linear needs a flat input, got {input_shape}; add a flatten layer")
        return Linear(input_shape[0], spec.out_features, name=name)
    raise ShapeError(name, f"unknown layer kind {spec.kind}")


class Network:
    """
    A stack of layers applied in order

    Training uses forward() (caches activations) then backward(); inference
    uses predict(), which keeps no state and so may be shared between threads.
    """

    def __init__(self, specs: Sequence[LayerSpec], input_shape: Tuple[int, ...]):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.layers: List[Layer] = []
        shape = self.input_shape
        for index, spec in enumerate(self.specs):
            layer = layer_from_spec(spec, shape, index)
            shape = layer.output_shape(shape)
            self.layers.append(layer)
        self.output_shape = shape
        self._forward_done = False

    @property
    def output_length(self) -> int:
        return int(np.prod(self.output_shape))

    def init_params(self, seed: int):
        """Seeded Kaiming-uniform weights, zero biases"""
        rng = derive_rng(seed, "init")
        for layer in self.layers:
            if hasattr(layer, "init_params"):
                layer.init_params(rng)

    def named_params(self) -> Iterator[Tuple[str, np.ndarray]]:
        for layer in self.layers:
            for key, value in layer.params.items():
                yield f"{layer.name}.{key}", value

    def named_grads(self) -> Iterator[Tuple[str, np.ndarray]]:
        for layer in self.layers:
            for key in layer.params:
                yield f"{layer.name}.{key}", layer.grads[key]

    def param_count(self) -> int:
        return sum(p.size for _, p in self.named_params())

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1:] != self.input_shape:
            raise ShapeError("input", f"expected per-sample shape {self.input_shape}, got {x.shape[1:]}")
        return x.astype(DTYPE, copy=False)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batched forward pass (N, *input_shape) that caches activations for backward()"""
        out = self._check_input(x)
        for layer in self.layers:
            out = layer.forward(out, cache=True)
        self._forward_done = True
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Batched forward pass without caching"""
        out = self._check_input(x)
        for layer in self.layers:
            out = layer.forward(out, cache=False)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """
        Reverse-mode pass from dLoss/dOutput

        Fills every layer's grads and returns dLoss/dInput.

        Raises:
            NetworkStateError: No cached forward pass
        """
        if not self._forward_done:
            raise NetworkStateError("backward() called before forward()")
        grad = np.asarray(grad_out, dtype=DTYPE)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.named_params()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        for name, value in self.named_params():
            if name not in state:
                raise ShapeError(name, "missing from state")
            if state[name].shape != value.shape:
                raise ShapeError(name, f"shape {state[name].shape} does not match {value.shape}")
            value[...] = state[name]

    def save(self, path: Union[str, Path], metadata: Optional[Dict[str, Any]] = None):
        """Write the HELIODET weights file (bit-exact for equal weights and metadata)"""
        header = {
            "input_shape": list(self.input_shape),
            "layers": [spec.model_dump(mode="json", exclude_none=True) for spec in self.specs],
            "params": [[name, list(value.shape)] for name, value in self.named_params()],
            "metadata": metadata or {},
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        blobs = b"".join(value.astype("<f4").tobytes() for _, value in self.named_params())

        save_file(
            path,
            WEIGHTS_MAGIC
            + struct.pack("<BI", WEIGHTS_VERSION, len(header_bytes))
            + header_bytes
            + blobs
        )
        logger.info(f"Weights saved: {path} ({self.param_count()} parameters)")

    @classmethod
    def load(cls, path: Union[str, Path]) -> Tuple["Network", Dict[str, Any]]:
        """
        Read a HELIODET weights file

        Returns:
            (network, metadata dict from the header)
        """
        path = Path(path)
        try:
            buf = path.read_bytes()
        except FileNotFoundError:
            raise DatasetIOError("weights file not found", [str(path)])

        if buf[:8] != WEIGHTS_MAGIC:
            raise DecodeError("not a HELIODET weights file", 0)
        if len(buf) < 13:
            raise DecodeError("truncated weights header", len(buf))
        version, header_len = struct.unpack("<BI", buf[8:13])
        if version != WEIGHTS_VERSION:
            raise DecodeError(f"unsupported weights version {version}", 8)
        header_end = 13 + header_len
        if len(buf) < header_end:
            raise DecodeError("truncated weights header", len(buf))
        header = json.loads(buf[13:header_end].decode("utf-8"))

        specs = [LayerSpec.model_validate(s) for s in header["layers"]]
        net = cls(specs, tuple(header["input_shape"]))
        state: Dict[str, np.ndarray] = {}
        offset = header_end
        for (name, value), (stored_name, shape) in zip(net.named_params(), header["params"]):
            if name != stored_name or list(value.shape) != list(shape):
                raise DecodeError(f"parameter {stored_name}{shape} does not match {name}{list(value.shape)}", offset)
            nbytes = value.size * 4
            if offset + nbytes > len(buf):
                raise DecodeError(f"truncated parameter blob {name}", len(buf))
            state[name] = np.frombuffer(buf, dtype="<f4", count=value.size, offset=offset).reshape(value.shape)
            offset += nbytes
        net.load_state_dict(state)
        logger.info(f"Weights loaded: {path}")
        return net, header.get("metadata", {})
