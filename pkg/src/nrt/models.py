"""Model definition, the small-CNN builder, prediction, and serialization.

A :class:`Model` is an ordered list of layer descriptors plus named parameter
tensors. It is frozen during analysis: evaluation is a pure function of the
parameters and the input, so concurrent forward passes are safe as long as
each gradient computation owns a private tape.

Model file format (extension ``.nrtm``): magic ``NRTM``, little-endian u32
format version, u32 header length, UTF-8 JSON header (architecture, parameter
manifest, training metadata), parameter blocks as little-endian float32 in
declaration order, and a trailing 64-bit checksum (first 8 bytes of the
SHA-256 of everything before it). The training metadata may embed the ground
truth trigger of a poisoned model so test harnesses can score detections;
scanners must never read it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import tensor as T
from .exceptions import (ConfigurationError, ModelChecksumError,
                         ModelFormatError, ModelVersionError, ShapeError,
                         TruncatedModelError, ValidationError)

MAGIC = b"NRTM"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Conv:
    name: str
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class MaxPool:
    window: int
    stride: int


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    name: str
    out_features: int


LayerSpec = Union[Conv, Relu, MaxPool, Flatten, Dense]


def _shape_chain(input_shape, layers) -> Tuple[List[tuple], Dict[str, tuple]]:
    """Propagate shapes through the stack; return per-layer output shapes and
    the expected parameter shapes."""
    shape = tuple(input_shape)
    shapes = []
    param_shapes: Dict[str, tuple] = {}
    for layer in layers:
        if isinstance(layer, Conv):
            if len(shape) != 3:
                raise ConfigurationError(f"conv after flatten (shape {shape})")
            c, h, w = shape
            k, s, p = layer.kernel_size, layer.stride, layer.padding
            ho = (h + 2 * p - k) // s + 1
            wo = (w + 2 * p - k) // s + 1
            if k > h + 2 * p or k > w + 2 * p or ho < 1 or wo < 1:
                raise ConfigurationError(
                    f"input too small: conv {k}x{k} does not fit {h}x{w} "
                    f"(padding {p})")
            param_shapes[f"{layer.name}.weight"] = (layer.out_channels, c, k, k)
            param_shapes[f"{layer.name}.bias"] = (layer.out_channels,)
            shape = (layer.out_channels, ho, wo)
        elif isinstance(layer, MaxPool):
            c, h, w = shape
            if layer.window > h or layer.window > w:
                raise ConfigurationError(
                    f"input too small: pool {layer.window} does not fit {h}x{w}")
            shape = (c, (h - layer.window) // layer.stride + 1,
                     (w - layer.window) // layer.stride + 1)
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(layer, Dense):
            if len(shape) != 1:
                raise ConfigurationError(f"dense on unflattened shape {shape}")
            param_shapes[f"{layer.name}.weight"] = (layer.out_features, shape[0])
            param_shapes[f"{layer.name}.bias"] = (layer.out_features,)
            shape = (layer.out_features,)
        shapes.append(shape)
    return shapes, param_shapes


class Model:
    """Ordered layer stack with named parameters theta."""

    def __init__(self, input_shape, num_classes: int, layers, params,
                 metadata: Optional[dict] = None):
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes = int(num_classes)
        self.layers: Tuple[LayerSpec, ...] = tuple(layers)
        shapes, expected = _shape_chain(self.input_shape, self.layers)
        if not self.layers or not isinstance(self.layers[-1], Dense) \
                or shapes[-1] != (self.num_classes,):
            raise ConfigurationError(
                f"stack must end in a dense layer with {self.num_classes} outputs")
        for name, shape in expected.items():
            if name not in params:
                raise ConfigurationError(f"missing parameter {name}")
            if tuple(params[name].shape) != shape:
                raise ConfigurationError(
                    f"parameter {name} has shape {tuple(params[name].shape)}, "
                    f"expected {shape}")
        self.params: Dict[str, T.Tensor] = {n: params[n] for n in expected}
        self.metadata = dict(metadata or {})

    def param_names(self) -> List[str]:
        """Parameter names in declaration (serialization) order."""
        return list(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def astype(self, dtype) -> "Model":
        params = {n: T.Tensor(p.data.astype(dtype), requires_grad=p.requires_grad)
                  for n, p in self.params.items()}
        return Model(self.input_shape, self.num_classes, self.layers, params,
                     self.metadata)

    def forward(self, x) -> T.Tensor:
        """Logits for a [C,H,W] image or an [N,C,H,W] batch (no softmax)."""
        if not isinstance(x, T.Tensor):
            x = T.Tensor(x)
        if x.shape[-3:] != self.input_shape or x.ndim not in (3, 4):
            raise ShapeError(f"input shape {x.shape} does not match model "
                             f"input {self.input_shape}")
        out = x
        for layer in self.layers:
            if isinstance(layer, Conv):
                out = T.conv2d(out, self.params[f"{layer.name}.weight"],
                               self.params[f"{layer.name}.bias"],
                               stride=layer.stride, padding=layer.padding)
            elif isinstance(layer, Relu):
                out = T.relu(out)
            elif isinstance(layer, MaxPool):
                out = T.maxpool2d(out, layer.window, layer.stride)
            elif isinstance(layer, Flatten):
                out = T.flatten(out)
            else:
                out = T.dense(out, self.params[f"{layer.name}.weight"],
                              self.params[f"{layer.name}.bias"])
        return out


def build_small_cnn(input_shape, num_classes: int, seed: int) -> Model:
    """LeNet-style stack: conv6@5x5-relu-pool2, conv16@5x5-relu-pool2,
    flatten, dense 120-relu, dense 84-relu, dense K.

    Weights are fan-in-scaled uniform, U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    biases zero; the same seed reproduces parameters bit for bit.
    """
    c, h, w = input_shape
    if h < 16 or w < 16:
        raise ConfigurationError(f"input {h}x{w} too small; need at least 16x16")
    layers = (
        Conv("conv1", 6, 5), Relu(), MaxPool(2, 2),
        Conv("conv2", 16, 5), Relu(), MaxPool(2, 2),
        Flatten(),
        Dense("fc1", 120), Relu(),
        Dense("fc2", 84), Relu(),
        Dense("out", num_classes),
    )
    _, param_shapes = _shape_chain(input_shape, layers)
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes.items():
        if name.endswith(".bias"):
            params[name] = T.Tensor(np.zeros(shape, dtype=np.float32),
                                    requires_grad=True)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = T.Tensor(
                rng.uniform(-bound, bound, size=shape).astype(np.float32),
                requires_grad=True)
    return Model(input_shape, num_classes, layers, params,
                 metadata={"seed": int(seed)})


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    probs: np.ndarray
    predicted_class: int
    confidence: float


def forward_logits(model: Model, x) -> T.Tensor:
    """Logits vector (or batch of vectors); deterministic, no softmax."""
    return model.forward(x)


def predict(model: Model, x) -> Prediction:
    """Class prediction for a single image with max-probability confidence."""
    logits = model.forward(x)
    if logits.ndim != 1:
        raise ShapeError("predict() takes a single image; use forward for batches")
    probs = T.softmax(logits).data
    k_hat = int(np.argmax(probs))
    return Prediction(logits=logits.data.copy(), probs=probs,
                      predicted_class=k_hat, confidence=float(probs[k_hat]))


# ---------------------------------------------------------------------------
# serialization

_LAYER_TAGS = {Conv: "conv", Relu: "relu", MaxPool: "maxpool",
               Flatten: "flatten", Dense: "dense"}


def _layer_to_json(layer: LayerSpec) -> dict:
    d = {"kind": _LAYER_TAGS[type(layer)]}
    for field in getattr(layer, "__dataclass_fields__", {}):
        d[field] = getattr(layer, field)
    return d


def _layer_from_json(d: dict) -> LayerSpec:
    kind = d.get("kind")
    if kind == "conv":
        return Conv(d["name"], int(d["out_channels"]), int(d["kernel_size"]),
                    int(d.get("stride", 1)), int(d.get("padding", 0)))
    if kind == "relu":
        return Relu()
    if kind == "maxpool":
        return MaxPool(int(d["window"]), int(d["stride"]))
    if kind == "flatten":
        return Flatten()
    if kind == "dense":
        return Dense(d["name"], int(d["out_features"]))
    raise ModelFormatError(f"unknown layer kind {kind!r}")


def _checksum(blob: bytes) -> bytes:
    return hashlib.sha256(blob).digest()[:8]


def save_model(model: Model, path) -> None:
    header = {
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "layers": [_layer_to_json(layer) for layer in model.layers],
        "params": [{"name": n, "shape": list(model.params[n].shape)}
                   for n in model.param_names()],
        "metadata": model.metadata,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", FORMAT_VERSION, len(header_bytes))
    blob += header_bytes
    for name in model.param_names():
        blob += np.ascontiguousarray(
            model.params[name].data, dtype="<f4").tobytes()
    blob += _checksum(bytes(blob))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise TruncatedModelError(f"{path}: file too short for a header")
    if blob[:4] != MAGIC:
        raise ModelFormatError(f"{path}: bad magic bytes {blob[:4]!r}")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise ModelVersionError(version, FORMAT_VERSION)
    if len(blob) < 12 + header_len + 8:
        raise TruncatedModelError(f"{path}: header declares {header_len} bytes "
                                  "but the file ends early")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
        params_manifest = header["params"]
        layers = [_layer_from_json(d) for d in header["layers"]]
        input_shape = tuple(header["input_shape"])
        num_classes = int(header["num_classes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: malformed header ({exc})") from exc
    n_param_bytes = sum(int(np.prod(p["shape"])) for p in params_manifest) * 4
    expected_len = 12 + header_len + n_param_bytes + 8
    if len(blob) < expected_len:
        raise TruncatedModelError(f"{path}: expected {expected_len} bytes, "
                                  f"got {len(blob)}")
    if len(blob) > expected_len:
        raise ModelFormatError(f"{path}: {len(blob) - expected_len} trailing bytes")
    if _checksum(blob[:-8]) != blob[-8:]:
        raise ModelChecksumError(f"{path}: checksum mismatch, file is corrupt")
    params = {}
    offset = 12 + header_len
    for p in params_manifest:
        shape = tuple(int(v) for v in p["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        params[p["name"]] = T.Tensor(arr.reshape(shape).copy(),
                                     requires_grad=True)
        offset += count * 4
    try:
        return Model(input_shape, num_classes, layers, params,
                     header.get("metadata"))
    except (ConfigurationError, ValidationError) as exc:
        raise ModelFormatError(f"{path}: inconsistent architecture ({exc})") from exc


def file_sha256(path) -> str:
    """Hex digest of a file, used as the model identifier in reports."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
