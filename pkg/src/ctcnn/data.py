"""Dataset scanning, splitting, image loading, batching, synthetic data.

A dataset root contains one directory per class; class ids are assigned by
code-point order of the directory names.  Every loaded sample comes out as a
[size, size, 3] float32 tensor with values in [0, 1]: decoded pixels and CTT1
payloads are both interpreted on a 0..255 scale and divided by 255.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DecodeError, EmptyDatasetError, FormatError
from .tensor import Tensor, read_ctt, write_ctt

RECOGNIZED_EXTENSIONS = {".png", ".jpg", ".jpeg", ".ctt"}

SYNTH_CLASSES = ("adenocarcinoma", "large_cell_carcinoma", "normal", "squamous_cell_carcinoma")


@dataclass(frozen=True)
class ClassIndex:
    """Ordered class-name to id mapping; ids run 0..C-1 in name order."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 2:
            raise ConfigError(f"need at least 2 classes, got {list(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"duplicate class names in {list(self.names)}")

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown class {name!r}") from None

    def name_of(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.names):
            raise IndexError(f"class id {class_id} out of range for {len(self.names)} classes")
        return self.names[class_id]


@dataclass(frozen=True)
class Sample:
    image: Tensor
    label: int
    path: str


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint, exhaustive train/val partition plus the seed that made it."""

    train: list
    val: list
    seed: int


def scan_dataset(root) -> tuple[ClassIndex, list[tuple[str, int]]]:
    """List (path, label) entries under a class-per-directory tree.

    Class directories are sorted by code point, files lexicographically within
    each class, so the listing is stable across filesystems.
    """
    root = Path(root)
    if not root.is_dir():
        raise EmptyDatasetError(f"dataset root {root} is not a directory")
    class_dirs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name)
    if len(class_dirs) < 2:
        raise EmptyDatasetError(f"dataset root {root} needs at least 2 class directories, found {len(class_dirs)}")
    entries: list[tuple[str, int]] = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(
            (f for f in class_dir.iterdir() if f.is_file() and f.suffix.lower() in RECOGNIZED_EXTENSIONS),
            key=lambda f: f.name,
        )
        if not files:
            warnings.warn(f"class directory {class_dir} contains no recognized samples", RuntimeWarning)
        entries.extend((str(f), label) for f in files)
    return ClassIndex(tuple(d.name for d in class_dirs)), entries


def split_dataset(entries, ratio: float = 0.8, seed: int = 42) -> DatasetSplit:
    """Seeded uniform shuffle; the first floor(ratio * N) items become train."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    if len(entries) < 2:
        raise ConfigError(f"need at least 2 entries to split, got {len(entries)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(entries))
    cut = int(len(entries) * ratio)
    if cut == 0 or cut == len(entries):
        raise ConfigError(f"ratio {ratio} leaves an empty split for {len(entries)} entries")
    train = [entries[i] for i in order[:cut]]
    val = [entries[i] for i in order[cut:]]
    return DatasetSplit(train, val, seed)


def _resize_bilinear(channels: np.ndarray, size: int) -> np.ndarray:
    """Per-channel float bilinear resize (half-pixel-centred sampling)."""
    resized = [
        np.asarray(
            Image.fromarray(channels[:, :, c], mode="F").resize((size, size), Image.Resampling.BILINEAR),
            dtype=np.float32,
        )
        for c in range(channels.shape[2])
    ]
    return np.stack(resized, axis=2)


def _load_ctt_sample(path: Path, size: int) -> np.ndarray:
    tensor = read_ctt(path)
    if tensor.rank != 3 or tensor.shape[2] not in (1, 3):
        raise FormatError(f"{path}: dataset tensors must be [H,W,1] or [H,W,3], got shape {tensor.shape}")
    arr = tensor.array
    if float(arr.min()) < 0.0 or float(arr.max()) > 255.0:
        raise FormatError(f"{path}: sample values must lie in [0, 255]")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    if arr.shape[:2] != (size, size):
        arr = _resize_bilinear(np.ascontiguousarray(arr), size)
    return arr


def load_image(path, size: int = 350) -> Tensor:
    """Decode one sample file to a [size, size, 3] tensor with values in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".ctt":
        arr = _load_ctt_sample(path, size)
    else:
        try:
            with Image.open(path) as im:
                im = im.convert("RGB")
                if im.size != (size, size):
                    im = im.resize((size, size), Image.Resampling.BILINEAR)
                arr = np.asarray(im, dtype=np.float32)
        except (UnidentifiedImageError, OSError) as exc:
            raise DecodeError(f"cannot decode image {path}: {exc}") from None
    return Tensor(arr / np.float32(255.0))


def load_samples(entries, size: int = 350) -> list[Sample]:
    """Eagerly load a list of (path, label) entries."""
    return [Sample(load_image(path, size), label, path) for path, label in entries]


def make_batches(samples, batch_size: int, seed: int, epoch: int) -> list[list]:
    """Reshuffle per epoch, seeded by (seed, epoch); the final short batch is kept."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    rng = np.random.default_rng((seed, epoch))
    order = rng.permutation(len(samples))
    return [[samples[i] for i in order[k : k + batch_size]] for k in range(0, len(samples), batch_size)]


def synth_dataset(out_dir, per_class: int, seed: int = 42, size: int = 64) -> list[str]:
    """Write a 4-class CTT1 dataset that is linearly separable by construction.

    Each class is a bright Gaussian blob pinned to its own quadrant over
    uniform background noise; identical seeds produce byte-identical files.
    Returns the written paths.
    """
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    if size < 16:
        raise ConfigError(f"size must be >= 16, got {size}")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    quarter, three_quarters = size / 4.0, 3.0 * size / 4.0
    centers = (
        (quarter, quarter),
        (quarter, three_quarters),
        (three_quarters, quarter),
        (three_quarters, three_quarters),
    )
    rows = np.arange(size, dtype=np.float64)[:, None]
    cols = np.arange(size, dtype=np.float64)[None, :]
    sigma = size / 8.0
    written: list[str] = []
    for label, name in enumerate(SYNTH_CLASSES):
        class_dir = out_dir / name
        class_dir.mkdir(parents=True, exist_ok=True)
        cy, cx = centers[label]
        blob_shape = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * sigma**2))
        for i in range(per_class):
            noise = rng.uniform(0.0, 40.0, (size, size))
            amplitude = rng.uniform(170.0, 215.0)
            values = np.clip(noise + amplitude * blob_shape, 0.0, 255.0)
            path = class_dir / f"sample_{i:04d}.ctt"
            write_ctt(path, Tensor(values[:, :, None].astype(np.float32)))
            written.append(str(path))
    return written
