"""Sequential model container, architecture presets, checkpoints, gradient checks.

The two presets share one topology: four 3x3 convolutions interleaved with
2x2 max pooling, dropout, and a two-layer dense head feeding a 4-way softmax
cross-entropy loss.  `paper` is the full 350x350 network (13,873,572
parameters); `tiny` is a 64x64 scale model for fast verification.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, StateError
from .layers import Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU, softmax_cross_entropy
from .tensor import Tensor

NUM_CLASSES = 4

# (input shape, conv channels, dense width)
PRESETS = {
    "paper": ((350, 350, 3), (32, 32, 64, 128), 64),
    "tiny": ((64, 64, 3), (8, 8, 16, 32), 16),
}

CNCK_MAGIC = b"CNCK"
CNCK_VERSION = 1


@dataclass(frozen=True)
class LayerSummary:
    name: str
    layer_type: str
    output_shape: tuple[int, ...]
    param_count: int


@dataclass(frozen=True)
class ModelSummary:
    rows: tuple[LayerSummary, ...]
    total_params: int
    trainable_params: int
    non_trainable_params: int


class Sequential:
    """An ordered layer stack with a single input and rank-1 logits output.

    Layer names are assigned Keras-style (conv2d, conv2d_1, ...) in stack
    order.  `class_names`, when set, maps logit indices to dataset classes and
    travels with checkpoints.
    """

    def __init__(self, layers: list[Layer], input_shape, class_names=None):
        if not layers:
            raise ConfigError("a model needs at least one layer")
        self.layers = list(layers)
        self.input_shape = tuple(int(e) for e in input_shape)
        shape = self.input_shape
        self.layer_output_shapes = []
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self.layer_output_shapes.append(shape)
        self.output_shape = shape
        counts: dict[str, int] = {}
        for layer in self.layers:
            n = counts.get(layer.summary_base, 0)
            layer.name = layer.summary_base if n == 0 else f"{layer.summary_base}_{n}"
            counts[layer.summary_base] = n + 1
        self.class_names = None
        if class_names is not None:
            class_names = [str(c) for c in class_names]
            if len(self.output_shape) != 1 or len(class_names) != self.output_shape[0]:
                raise ConfigError(
                    f"{len(class_names)} class names for output shape {self.output_shape}"
                )
            self.class_names = class_names
        self._train_ready = False

    @property
    def dtype(self):
        for p in self.parameters():
            return p.dtype
        return np.dtype(np.float32)

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in layer order, weights before bias."""
        return [arr for layer in self.layers for _, arr in layer.params()]

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if x.shape != self.input_shape:
            raise DimensionError(f"model expects input shape {self.input_shape}, got {x.shape}")
        if x.dtype != self.dtype:
            x = x.astype(self.dtype)
        for layer in self.layers:
            x = layer.forward(x, train=train)
        self._train_ready = train
        return x

    def backward(self, dlogits: Tensor) -> list[np.ndarray]:
        """Gradients for `parameters()`, in the same order; the input gradient is discarded."""
        if not self._train_ready:
            raise StateError("backward requires a preceding train-mode forward")
        grad = dlogits
        grads: list[np.ndarray] = []
        for layer in reversed(self.layers):
            if layer.params():
                grad, dw, db = layer.backward(grad)
                grads[:0] = [dw, db]
            else:
                grad = layer.backward(grad)
        return grads

    def summary(self) -> ModelSummary:
        """Per-layer rows (activations fold into their owning layer) plus totals."""
        rows = []
        for layer, shape in zip(self.layers, self.layer_output_shapes):
            if isinstance(layer, ReLU):
                continue
            rows.append(LayerSummary(layer.name, layer.summary_type, shape, layer.param_count()))
        trainable = self.param_count()
        return ModelSummary(tuple(rows), trainable, trainable, 0)

    def _pattern_signature(self):
        return tuple(layer.pattern() for layer in self.layers)


def build_model(arch: str, seed: int = 0, dtype=np.float32) -> Sequential:
    """Instantiate a preset architecture with seeded He-uniform initialization."""
    if arch not in PRESETS:
        raise ConfigError(f"unknown architecture preset {arch!r}; choose from {sorted(PRESETS)}")
    input_shape, channels, dense_width = PRESETS[arch]
    rng = np.random.default_rng(seed)

    def dropout_seed() -> int:
        return int(rng.integers(2**63))

    layers: list[Layer] = []
    shape = input_shape
    in_c = input_shape[2]
    for i, out_c in enumerate(channels):
        conv = Conv2D(in_c, out_c, rng=rng, dtype=dtype)
        layers.append(conv)
        layers.append(ReLU())
        shape = conv.output_shape(shape)
        if i >= 1:
            pool = MaxPool2D()
            layers.append(pool)
            shape = pool.output_shape(shape)
        in_c = out_c
    layers.append(Dropout(0.5, seed=dropout_seed()))
    flatten = Flatten()
    layers.append(flatten)
    shape = flatten.output_shape(shape)
    layers.append(Dense(shape[0], dense_width, rng=rng, dtype=dtype))
    layers.append(ReLU())
    layers.append(Dropout(0.5, seed=dropout_seed()))
    layers.append(Dense(dense_width, NUM_CLASSES, rng=rng, dtype=dtype))
    return Sequential(layers, input_shape)


def format_summary(summary: ModelSummary) -> str:
    """Render a summary as the familiar fixed-width table."""
    lines = [f"{'Layer (type)':<33}{'Output Shape':<26}{'Param #':>8}"]
    lines.append("=" * 67)
    for row in summary.rows:
        shape = "(None, " + ", ".join(str(e) for e in row.output_shape) + ")"
        lines.append(f"{row.name + ' (' + row.layer_type + ')':<33}{shape:<26}{row.param_count:>8}")
    lines.append("=" * 67)
    lines.append(f"Total params: {summary.total_params:,}")
    lines.append(f"Trainable params: {summary.trainable_params:,}")
    lines.append(f"Non-trainable params: {summary.non_trainable_params:,}")
    return "\n".join(lines)


# --- checkpoint serialization ---------------------------------------------


def _layer_header(layer: Layer) -> dict:
    if isinstance(layer, Conv2D):
        return {
            "type": "conv2d",
            "in_channels": layer.in_channels,
            "out_channels": layer.out_channels,
            "params": [[name, list(arr.shape)] for name, arr in layer.params()],
        }
    if isinstance(layer, Dense):
        return {
            "type": "dense",
            "in_features": layer.in_features,
            "out_features": layer.out_features,
            "params": [[name, list(arr.shape)] for name, arr in layer.params()],
        }
    if isinstance(layer, MaxPool2D):
        return {"type": "max_pooling2d"}
    if isinstance(layer, Dropout):
        return {"type": "dropout", "rate": layer.rate, "seed": layer.seed}
    if isinstance(layer, ReLU):
        return {"type": "relu"}
    if isinstance(layer, Flatten):
        return {"type": "flatten"}
    raise ConfigError(f"cannot serialize layer type {type(layer).__name__}")


def checkpoint_bytes(model: Sequential) -> bytes:
    header = {
        "input_shape": list(model.input_shape),
        "classes": model.class_names,
        "layers": [_layer_header(layer) for layer in model.layers],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CNCK_MAGIC, struct.pack("<I", CNCK_VERSION), struct.pack("<I", len(header_bytes)), header_bytes]
    for layer in model.layers:
        for _, arr in layer.params():
            parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: Sequential, path) -> None:
    """Write a CNCK checkpoint atomically (temp file + rename).

    Parameters are stored as row-major little-endian float32 regardless of
    the model's working precision.
    """
    path = Path(path)
    blob = checkpoint_bytes(model)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _build_layer_from_header(entry: dict) -> Layer:
    kind = entry.get("type")
    if kind == "conv2d":
        return Conv2D(int(entry["in_channels"]), int(entry["out_channels"]))
    if kind == "dense":
        return Dense(int(entry["in_features"]), int(entry["out_features"]))
    if kind == "max_pooling2d":
        return MaxPool2D()
    if kind == "dropout":
        return Dropout(float(entry["rate"]), seed=int(entry["seed"]))
    if kind == "relu":
        return ReLU()
    if kind == "flatten":
        return Flatten()
    raise FormatError(f"unknown layer type {kind!r} in checkpoint header")


def load_checkpoint(path) -> Sequential:
    """Read a CNCK checkpoint back into a model."""
    blob = Path(path).read_bytes()
    if blob[:4] != CNCK_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {CNCK_MAGIC!r}", offset=0)
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated fixed header", offset=len(blob))
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CNCK_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    (header_len,) = struct.unpack_from("<I", blob, 8)
    if len(blob) < 12 + header_len:
        raise FormatError(f"{path}: truncated JSON header", offset=len(blob))
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unparsable JSON header: {exc}", offset=12) from None
    try:
        input_shape = tuple(int(e) for e in header["input_shape"])
        classes = header["classes"]
        layer_entries = header["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed header fields: {exc}", offset=12) from None

    layers = [_build_layer_from_header(entry) for entry in layer_entries]
    offset = 12 + header_len
    for layer, entry in zip(layers, layer_entries):
        for (name, arr), declared in zip(layer.params(), entry.get("params", [])):
            decl_name, decl_shape = declared
            if decl_name != name or tuple(decl_shape) != arr.shape:
                raise FormatError(
                    f"{path}: header declares {decl_name}{decl_shape} where layer "
                    f"{entry['type']} has {name}{list(arr.shape)}",
                    offset=offset,
                )
            nbytes = arr.size * 4
            if len(blob) < offset + nbytes:
                raise FormatError(f"{path}: truncated payload for {entry['type']}.{name}", offset=len(blob))
            values = np.frombuffer(blob, dtype="<f4", count=arr.size, offset=offset).reshape(arr.shape)
            arr[...] = values
            offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes after payload", offset=offset)
    return Sequential(layers, input_shape, class_names=classes)


# --- gradient verification -------------------------------------------------


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients with central differences."""

    name: str
    max_rel_err: float
    checked: int
    skipped: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_err <= self.tol


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)


def _sample_indices(arr: np.ndarray, limit: int, rng: np.random.Generator):
    if arr.size <= limit:
        flat = np.arange(arr.size)
    else:
        flat = rng.choice(arr.size, size=limit, replace=False)
    return [np.unravel_index(int(i), arr.shape) for i in flat]


def _central_differences(objective, arr, indices, h):
    """Yield (index, derivative, crossed) where `crossed` flags a kink between the two probes."""
    for idx in indices:
        orig = arr[idx]
        arr[idx] = orig + h
        f_plus, sig_plus = objective()
        arr[idx] = orig - h
        f_minus, sig_minus = objective()
        arr[idx] = orig
        yield idx, (f_plus - f_minus) / (2.0 * h), sig_plus != sig_minus


def _require_float64(arrays, what: str):
    for arr in arrays:
        if arr.dtype != np.float64:
            raise ConfigError(f"{what} requires float64 parameters; rebuild with dtype=np.float64")


def _compare(pairs, objective, h, tol, rng, samples, name):
    """pairs: (parameter array, analytic gradient array)."""
    max_err, checked, skipped = 0.0, 0, 0
    for arr, analytic in pairs:
        for idx, numeric, crossed in _central_differences(objective, arr, _sample_indices(arr, samples, rng), h):
            if crossed:
                skipped += 1
                continue
            max_err = max(max_err, _rel_err(float(analytic[idx]), numeric))
            checked += 1
    return GradCheckReport(name, max_err, checked, skipped, tol)


_PROBE_SHAPES = {MaxPool2D: (6, 6, 2), ReLU: (12,), Dropout: (24,)}


def grad_check(target, h: float = 1e-4, tol: float = 1e-6, seed: int = 0,
               samples_per_tensor: int = 25, input_shape=None) -> GradCheckReport:
    """Verify analytic gradients against 64-bit central finite differences.

    The objective is the training loss for a Sequential model (dropout masks
    pinned so it is deterministic) and a fixed random weighting of the outputs
    for a single layer.  Probes that straddle a ReLU zero or a pooling tie are
    detected by comparing activation patterns and skipped.  Failures are
    reported in the result, never raised.
    """
    rng = np.random.default_rng(seed)
    if isinstance(target, Sequential):
        return _check_model(target, h, tol, rng, samples_per_tensor)
    if isinstance(target, (Conv2D, Dense)):
        return _check_param_layer(target, h, tol, rng, samples_per_tensor, input_shape)
    if isinstance(target, (MaxPool2D, ReLU, Dropout)):
        return _check_input_layer(target, h, tol, rng, samples_per_tensor, input_shape)
    raise ConfigError(f"grad_check does not support {type(target).__name__}")


def _check_model(model: Sequential, h, tol, rng, samples):
    _require_float64(model.parameters(), "grad_check on a model")
    x = Tensor(rng.uniform(0.0, 1.0, model.input_shape), dtype=np.float64)
    label = int(rng.integers(model.output_shape[0]))
    dropouts = [layer for layer in model.layers if isinstance(layer, Dropout)]
    try:
        model.forward(x, train=True)
        for d in dropouts:
            d.fixed_mask = d._cache
        logits = model.forward(x, train=True)
        _, _, dlogits = softmax_cross_entropy(logits, label)
        grads = model.backward(dlogits)

        def objective():
            loss, _, _ = softmax_cross_entropy(model.forward(x, train=True), label)
            return loss, model._pattern_signature()

        return _compare(list(zip(model.parameters(), grads)), objective, h, tol, rng, samples, "model")
    finally:
        for d in dropouts:
            d.fixed_mask = None


def _check_param_layer(layer, h, tol, rng, samples, input_shape):
    _require_float64([arr for _, arr in layer.params()], "grad_check on a layer")
    if input_shape is None:
        input_shape = (layer.in_features,) if isinstance(layer, Dense) else (6, 6, layer.in_channels)
    xa = rng.uniform(-1.0, 1.0, input_shape)
    weighting = Tensor(rng.uniform(-1.0, 1.0, layer.output_shape(tuple(input_shape))), dtype=np.float64)
    layer.forward(Tensor(xa, dtype=np.float64))
    dx, dweights, dbias = layer.backward(weighting)

    def objective():
        y = layer.forward(Tensor(xa, dtype=np.float64))
        return float(np.sum(y.array * weighting.array)), None

    pairs = [(layer.weights, dweights), (layer.bias, dbias), (xa, dx.array)]
    return _compare(pairs, objective, h, tol, rng, samples, layer.summary_base)


def _check_input_layer(layer, h, tol, rng, samples, input_shape):
    if input_shape is None:
        input_shape = _PROBE_SHAPES[type(layer)]
    if isinstance(layer, ReLU):
        # keep probe values away from the kink at 0
        xa = rng.uniform(0.05, 1.0, input_shape) * np.where(rng.random(input_shape) < 0.5, -1.0, 1.0)
    else:
        xa = rng.uniform(-1.0, 1.0, input_shape)
    weighting = Tensor(rng.uniform(-1.0, 1.0, layer.output_shape(tuple(input_shape))), dtype=np.float64)
    pinned = isinstance(layer, Dropout)
    try:
        layer.forward(Tensor(xa, dtype=np.float64), train=True)
        if pinned:
            layer.fixed_mask = layer._cache
            layer.forward(Tensor(xa, dtype=np.float64), train=True)
        dx = layer.backward(weighting)

        def objective():
            y = layer.forward(Tensor(xa, dtype=np.float64), train=True)
            return float(np.sum(y.array * weighting.array)), layer.pattern()

        return _compare([(xa, dx.array)], objective, h, tol, rng, samples, layer.summary_base)
    finally:
        if pinned:
            layer.fixed_mask = None


def _check_softmax_cross_entropy(h, tol, rng, samples):
    logits = rng.uniform(-2.0, 2.0, 5)
    label = int(rng.integers(logits.size))
    _, _, dlogits = softmax_cross_entropy(Tensor(logits, dtype=np.float64), label)

    def objective():
        loss, _, _ = softmax_cross_entropy(Tensor(logits, dtype=np.float64), label)
        return loss, None

    return _compare([(logits, dlogits.array)], objective, h, tol, rng, samples, "softmax_cross_entropy")


class _BrokenDense(Dense):
    """Negative control for the verification suite: weight gradient doubled."""

    def backward(self, dy):
        dx, dweights, dbias = super().backward(dy)
        return dx, 2.0 * dweights, dbias


@dataclass
class GradCheckSuiteResult:
    reports: list[tuple[str, GradCheckReport]]
    negative_control_caught: bool

    @property
    def passed(self) -> bool:
        return self.negative_control_caught and all(r.passed for _, r in self.reports)


def gradcheck_suite(seed: int = 42, h: float = 1e-4, tol: float = 1e-6) -> GradCheckSuiteResult:
    """Gradient-check every layer kind, the loss head, and the tiny model.

    A deliberately corrupted dense backward must come out failing; the suite
    as a whole passes only if that negative control is caught.
    """
    rng = np.random.default_rng(seed)

    def child():
        return int(rng.integers(2**31))

    reports = [
        ("dense", grad_check(Dense(8, 5, np.random.default_rng(child()), np.float64),
                             h=h, tol=tol, seed=child())),
        ("conv2d", grad_check(Conv2D(2, 2, np.random.default_rng(child()), np.float64),
                              h=h, tol=tol, seed=child())),
        ("max_pooling2d", grad_check(MaxPool2D(), h=h, tol=tol, seed=child())),
        ("relu", grad_check(ReLU(), h=h, tol=tol, seed=child())),
        ("dropout", grad_check(Dropout(0.5, seed=child()), h=h, tol=tol, seed=child())),
        ("softmax_cross_entropy",
         _check_softmax_cross_entropy(h, tol, np.random.default_rng(child()), 25)),
        ("tiny model", grad_check(build_model("tiny", seed=child(), dtype=np.float64),
                                  h=h, tol=tol, seed=child())),
    ]
    broken = grad_check(_BrokenDense(8, 5, np.random.default_rng(child()), np.float64),
                        h=h, tol=tol, seed=child())
    return GradCheckSuiteResult(reports, negative_control_caught=not broken.passed)
