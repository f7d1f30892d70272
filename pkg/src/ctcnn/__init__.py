"""Deterministic from-scratch CNN toolkit for 4-class chest CT classification."""

from .errors import (
    ConfigError,
    CtcnnError,
    DecodeError,
    DimensionError,
    EmptyDatasetError,
    FormatError,
    NumericError,
    StateError,
)
from .tensor import Tensor, argmax, im2col, matmul, read_ctt, write_ctt
from .layers import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool2D,
    ReLU,
    softmax,
    softmax_cross_entropy,
)
from .optim import SGD, Adam
from .model import (
    GradCheckReport,
    LayerSummary,
    ModelSummary,
    Sequential,
    build_model,
    format_summary,
    grad_check,
    gradcheck_suite,
    load_checkpoint,
    save_checkpoint,
)
from .data import (
    ClassIndex,
    DatasetSplit,
    Sample,
    load_image,
    load_samples,
    make_batches,
    scan_dataset,
    split_dataset,
    synth_dataset,
)
from .train import (
    BestCheckpoint,
    EpochMetrics,
    TrainConfig,
    accuracy,
    evaluate,
    run_training,
    write_metrics_csv,
)

__version__ = "0.1.0"
