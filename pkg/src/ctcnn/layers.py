"""Network layers with explicit forward/backward passes.

Every layer caches what its backward pass needs during forward, so a layer
instance belongs to exactly one training loop at a time.  Convolutions are
lowered to im2col + matmul; the classification head is a fused softmax
cross-entropy, so softmax never appears as a standalone layer in the
backward path.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError, StateError
from .tensor import Tensor, im2col, matmul


class Layer:
    """Common surface: forward/backward, parameter access, shape arithmetic."""

    summary_base = "layer"
    summary_type = "Layer"

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        raise NotImplementedError

    def backward(self, dy: Tensor):
        raise NotImplementedError

    def params(self) -> list[tuple[str, np.ndarray]]:
        """(name, array) pairs for trainable parameters, in checkpoint order."""
        return []

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.params())

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def pattern(self):
        """Byte signature of any non-differentiable choices made by the last forward."""
        return None

    def _require_cache(self, cache, action="backward"):
        if cache is None:
            raise StateError(f"{type(self).__name__}.{action} called before forward")
        return cache


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    """3x3 valid convolution, stride 1.

    weights: [3, 3, in_channels, out_channels], bias: [out_channels].
    Forward flattens each input window with im2col and multiplies against the
    kernel bank reshaped to [9*in_channels, out_channels]; the (kh, kw, c)
    ordering of both sides must agree for this to be a convolution.
    """

    KERNEL = 3
    summary_base = "conv2d"
    summary_type = "Conv2D"

    def __init__(self, in_channels: int, out_channels: int, rng=None, dtype=np.float32):
        if in_channels < 1 or out_channels < 1:
            raise ConfigError(f"channel counts must be >= 1, got {in_channels}->{out_channels}")
        if rng is None:
            rng = np.random.default_rng(0)
        k = self.KERNEL
        fan_in = k * k * in_channels
        self.weights = he_uniform(rng, (k, k, in_channels, out_channels), fan_in, dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self._cache = None

    @property
    def in_channels(self) -> int:
        return self.weights.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[3]

    def params(self):
        return [("weights", self.weights), ("bias", self.bias)]

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise DimensionError(f"Conv2D expects [H,W,C] input, got {input_shape}")
        h, w, c = input_shape
        if c != self.in_channels:
            raise DimensionError(f"Conv2D expects {self.in_channels} channels, got {c}")
        if h < self.KERNEL or w < self.KERNEL:
            raise DimensionError(f"input {input_shape} smaller than {self.KERNEL}x{self.KERNEL} kernel")
        return (h - self.KERNEL + 1, w - self.KERNEL + 1, self.out_channels)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        out_h, out_w, out_c = self.output_shape(x.shape)
        cols = im2col(x, self.KERNEL).array.astype(self.weights.dtype, copy=False)
        k = self.KERNEL
        kernel_matrix = self.weights.reshape(k * k * self.in_channels, out_c)
        out = cols @ kernel_matrix + self.bias
        self._cache = (x.shape, cols)
        return Tensor(out.reshape(out_h, out_w, out_c))

    def backward(self, dy: Tensor):
        """Returns (dx, dweights, dbias) for the cached input."""
        in_shape, cols = self._require_cache(self._cache)
        expected = self.output_shape(in_shape)
        if dy.shape != expected:
            raise DimensionError(f"upstream gradient shape {dy.shape}, expected {expected}")
        k = self.KERNEL
        out_c = self.out_channels
        dy2d = dy.array.reshape(-1, out_c).astype(self.weights.dtype, copy=False)
        dweights = (cols.T @ dy2d).reshape(self.weights.shape)
        dbias = dy2d.sum(axis=0)
        # dx is the full correlation of dy with the spatially flipped kernels
        pad = k - 1
        dy_padded = np.pad(dy.array, ((pad, pad), (pad, pad), (0, 0)))
        flipped = self.weights[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * out_c, self.in_channels)
        dy_cols = im2col(Tensor(dy_padded, dtype=dy_padded.dtype), k).array
        dx = (dy_cols @ flipped).reshape(in_shape)
        return Tensor(dx), dweights, dbias


class MaxPool2D(Layer):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped.

    Within a window, ties route the gradient to the first maximal position in
    row-major order.
    """

    summary_base = "max_pooling2d"
    summary_type = "MaxPooling2D"

    def __init__(self):
        self._cache = None

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise DimensionError(f"MaxPool2D expects [H,W,C] input, got {input_shape}")
        h, w, c = input_shape
        if h < 2 or w < 2:
            raise DimensionError(f"input {input_shape} smaller than a 2x2 window")
        return (h // 2, w // 2, c)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        out_h, out_w, c = self.output_shape(x.shape)
        cropped = x.array[: 2 * out_h, : 2 * out_w, :]
        # windows flattened row-major: positions (0,0),(0,1),(1,0),(1,1)
        windows = cropped.reshape(out_h, 2, out_w, 2, c).transpose(0, 2, 4, 1, 3).reshape(out_h, out_w, c, 4)
        idx = np.argmax(windows, axis=-1)
        out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, idx)
        return Tensor(out)

    def backward(self, dy: Tensor) -> Tensor:
        in_shape, idx = self._require_cache(self._cache)
        expected = self.output_shape(in_shape)
        if dy.shape != expected:
            raise DimensionError(f"upstream gradient shape {dy.shape}, expected {expected}")
        out_h, out_w, c = expected
        dx = np.zeros(in_shape, dtype=dy.dtype)
        rows = 2 * np.arange(out_h)[:, None, None] + idx // 2
        cols = 2 * np.arange(out_w)[None, :, None] + idx % 2
        chans = np.broadcast_to(np.arange(c), idx.shape)
        dx[rows, cols, chans] = dy.array
        return Tensor(dx)

    def pattern(self):
        if self._cache is None:
            return None
        return self._cache[1].tobytes()


class Dropout(Layer):
    """Inverted dropout: kept activations are rescaled by 1/(1-rate).

    Inference mode is the identity and draws nothing from the random stream.
    `fixed_mask` pins the next train-mode masks, which gradient verification
    uses to make the loss a deterministic function of the parameters.
    """

    summary_base = "dropout"
    summary_type = "Dropout"

    def __init__(self, rate: float = 0.5, seed: int = 0):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self.fixed_mask = None
        self._cache = None

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if not train:
            return x
        keep = 1.0 - self.rate
        if self.fixed_mask is not None:
            mask = self.fixed_mask
            if mask.shape != x.shape:
                raise DimensionError(f"fixed mask shape {mask.shape}, input {x.shape}")
        else:
            mask = self._rng.random(x.shape) < keep
        self._cache = mask
        return Tensor(x.array * mask / keep)

    def backward(self, dy: Tensor) -> Tensor:
        mask = self._require_cache(self._cache)
        if dy.shape != mask.shape:
            raise DimensionError(f"upstream gradient shape {dy.shape}, expected {mask.shape}")
        return Tensor(dy.array * mask / (1.0 - self.rate))


class ReLU(Layer):
    """max(0, x); the subgradient at exactly 0 is taken as 0."""

    summary_base = "re_lu"
    summary_type = "ReLU"

    def __init__(self):
        self._cache = None

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        self._cache = x.array
        return Tensor(np.maximum(x.array, 0))

    def backward(self, dy: Tensor) -> Tensor:
        x = self._require_cache(self._cache)
        if dy.shape != x.shape:
            raise DimensionError(f"upstream gradient shape {dy.shape}, expected {x.shape}")
        return Tensor(dy.array * (x > 0))

    def pattern(self):
        if self._cache is None:
            return None
        return (self._cache > 0).tobytes()


class Flatten(Layer):
    """Reshape any input to rank 1, row-major."""

    summary_base = "flatten"
    summary_type = "Flatten"

    def __init__(self):
        self._in_shape = None

    def output_shape(self, input_shape):
        n = 1
        for e in input_shape:
            n *= e
        return (n,)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        self._in_shape = x.shape
        return Tensor(x.array.reshape(-1))

    def backward(self, dy: Tensor) -> Tensor:
        in_shape = self._require_cache(self._in_shape)
        if dy.size != int(np.prod(in_shape)):
            raise DimensionError(f"upstream gradient size {dy.size}, expected {np.prod(in_shape)}")
        return Tensor(dy.array.reshape(in_shape))


class Dense(Layer):
    """Fully connected layer: y = x @ weights + bias on rank-1 inputs."""

    summary_base = "dense"
    summary_type = "Dense"

    def __init__(self, in_features: int, out_features: int, rng=None, dtype=np.float32):
        if in_features < 1 or out_features < 1:
            raise ConfigError(f"feature counts must be >= 1, got {in_features}->{out_features}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.weights = he_uniform(rng, (in_features, out_features), in_features, dtype)
        self.bias = np.zeros(out_features, dtype=dtype)
        self._cache = None

    @property
    def in_features(self) -> int:
        return self.weights.shape[0]

    @property
    def out_features(self) -> int:
        return self.weights.shape[1]

    def params(self):
        return [("weights", self.weights), ("bias", self.bias)]

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.in_features,):
            raise DimensionError(f"Dense expects input shape ({self.in_features},), got {tuple(input_shape)}")
        return (self.out_features,)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        self.output_shape(x.shape)
        xa = x.array.astype(self.weights.dtype, copy=False)
        self._cache = xa
        return Tensor(xa @ self.weights + self.bias)

    def backward(self, dy: Tensor):
        """Returns (dx, dweights, dbias) for the cached input."""
        xa = self._require_cache(self._cache)
        if dy.shape != (self.out_features,):
            raise DimensionError(f"upstream gradient shape {dy.shape}, expected ({self.out_features},)")
        dya = dy.array.astype(self.weights.dtype, copy=False)
        dweights = np.outer(xa, dya)
        dbias = dya.copy()
        dx = self.weights @ dya
        return Tensor(dx), dweights, dbias


def softmax(logits: Tensor) -> Tensor:
    """Numerically stable softmax over a rank-1 tensor."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    if logits.rank != 1:
        raise DimensionError(f"softmax expects a rank-1 tensor, got shape {logits.shape}")
    shifted = logits.array - logits.array.max()
    e = np.exp(shifted)
    return Tensor(e / e.sum())


def softmax_cross_entropy(logits: Tensor, true_class: int):
    """Fused softmax + cross-entropy head.

    Returns (loss, probabilities, dlogits) where loss = -log p[true_class]
    computed via the max-shifted log-sum-exp and dlogits = p - onehot.
    """
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    if logits.rank != 1 or logits.size < 2:
        raise DimensionError(f"logits must be rank-1 with length >= 2, got shape {logits.shape}")
    n = logits.size
    if not 0 <= true_class < n:
        raise IndexError(f"true class {true_class} out of range for {n} classes")
    z = logits.array
    shifted = z - z.max()
    e = np.exp(shifted)
    total = e.sum()
    loss = float(np.log(total) - shifted[true_class])
    probs = e / total
    dlogits = probs.copy()
    dlogits[true_class] -= 1.0
    return loss, Tensor(probs), Tensor(dlogits, dtype=z.dtype)
