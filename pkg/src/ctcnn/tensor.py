"""Dense float tensors plus the handful of primitives the network is lowered to.

Images follow a height x width x channels layout and everything is stored
row-major.  Production code runs in float32; float64 is accepted so that
gradient verification can run the same kernels at higher precision.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, NumericError

MAX_RANK = 4
_ALLOWED_DTYPES = (np.float32, np.float64)

CTT_MAGIC = b"CTT1"


class Tensor:
    """Immutable dense tensor of rank 1..4.

    Construction copies the input values, validates the shape and rejects
    NaN/Inf so that every tensor in circulation is finite by construction.
    """

    __slots__ = ("_array",)

    def __init__(self, values, dtype=None):
        if isinstance(values, Tensor):
            values = values.array
        arr = np.asarray(values)
        if dtype is None:
            # Only a real float64 array opts into verification precision;
            # plain Python numbers land at the production width.
            if isinstance(values, np.ndarray) and arr.dtype in _ALLOWED_DTYPES:
                dtype = arr.dtype
            else:
                dtype = np.float32
        elif dtype not in _ALLOWED_DTYPES:
            raise DimensionError(f"unsupported dtype {dtype!r}; expected float32 or float64")
        arr = np.array(arr, dtype=dtype, order="C")
        if not 1 <= arr.ndim <= MAX_RANK:
            raise DimensionError(f"rank must be 1..{MAX_RANK}, got shape {arr.shape}")
        if arr.size == 0:
            raise DimensionError(f"all extents must be >= 1, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("tensor contains NaN or Inf")
        arr.flags.writeable = False
        self._array = arr

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype), dtype=dtype)

    @classmethod
    def full(cls, shape, value, dtype=np.float32) -> "Tensor":
        return cls(np.full(shape, value, dtype=dtype), dtype=dtype)

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view of the contents."""
        return self._array

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the contents."""
        return self._array.reshape(-1)

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def rank(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return self._array.size

    @property
    def dtype(self):
        return self._array.dtype

    def astype(self, dtype) -> "Tensor":
        return Tensor(self._array, dtype=dtype)

    def tolist(self):
        return self._array.tolist()

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._array
        return self._array.astype(dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self._array.dtype.name})"


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if a.rank != 2 or b.rank != 2:
        raise DimensionError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return Tensor(np.matmul(a.array, b.array))


def im2col(image: Tensor, kernel: int = 3, stride: int = 1) -> Tensor:
    """Unfold a [H,W,C] image into a patch matrix of shape [(H-k+1)(W-k+1), k*k*C].

    Row r holds the r-th valid kernel window flattened in (row-offset,
    col-offset, channel) order; windows are enumerated row-major over output
    positions.  With this layout a convolution is a single matmul against the
    kernel bank reshaped to [k*k*C, out_channels].
    """
    if image.rank != 3:
        raise DimensionError(f"im2col expects a [H,W,C] image, got shape {image.shape}")
    h, w, c = image.shape
    if h < kernel or w < kernel:
        raise DimensionError(f"image {image.shape} smaller than {kernel}x{kernel} kernel")
    windows = np.lib.stride_tricks.sliding_window_view(image.array, (kernel, kernel), axis=(0, 1))
    # windows: [H-k+1, W-k+1, C, k, k] -> reorder so each row flattens as (kh, kw, c)
    out_h, out_w = h - kernel + 1, w - kernel + 1
    if stride != 1:
        windows = windows[::stride, ::stride]
        out_h = (h - kernel) // stride + 1
        out_w = (w - kernel) // stride + 1
    cols = windows.transpose(0, 1, 3, 4, 2).reshape(out_h * out_w, kernel * kernel * c)
    return Tensor(cols)


def argmax(vector: Tensor) -> int:
    """Index of the largest element of a rank-1 tensor; ties go to the smallest index."""
    if vector.rank != 1:
        raise DimensionError(f"argmax expects a rank-1 tensor, got shape {vector.shape}")
    return int(np.argmax(vector.array))


def write_ctt(path, tensor: Tensor) -> None:
    """Serialize a tensor: magic 'CTT1', u32 rank, u32 extents, f32 payload (all LE)."""
    arr = tensor.array.astype("<f4")
    blob = CTT_MAGIC + struct.pack("<I", arr.ndim)
    blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
    blob += arr.tobytes()
    Path(path).write_bytes(blob)


def read_ctt(path) -> Tensor:
    """Parse a CTT1 file back into a Tensor, validating layout byte by byte."""
    blob = Path(path).read_bytes()
    if blob[:4] != CTT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {CTT_MAGIC!r}", offset=0)
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated before rank field", offset=len(blob))
    (rank,) = struct.unpack_from("<I", blob, 4)
    if not 1 <= rank <= MAX_RANK:
        raise FormatError(f"{path}: rank {rank} outside 1..{MAX_RANK}", offset=4)
    header_end = 8 + 4 * rank
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated extent list", offset=len(blob))
    extents = struct.unpack_from(f"<{rank}I", blob, 8)
    if any(e < 1 for e in extents):
        raise FormatError(f"{path}: zero extent in {extents}", offset=8)
    expected = int(np.prod(extents)) * 4
    payload = blob[header_end:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes, expected {expected}",
            offset=header_end + min(len(payload), expected),
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(extents)
    return Tensor(values)
