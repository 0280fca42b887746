"""Rich-U-Net: a segmentation network with sparse top-k attention,
recurrent spatial fusion, and gated skip aggregation, built on a small
float64 reverse-mode autodiff core.  Runs on a compiled kernel backend
when available and a pure numpy backend otherwise.
"""

from .autodiff import Parameter, Tape, Tensor, backward
from .errors import (CheckpointError, ConfigError, DataError,
                     MetricUndefinedError, NumericalError, PgmError,
                     RichUNetError, ShapeError, UsageError)
from .metrics import dice, hd95, iou, mask_from_logits
from .network import RichUNet, RichUNetConfig, build, micro_config
from .rng import SplitMix64, derive_seed
from .train import TrainConfig, evaluate, net_from_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Parameter", "Tape", "Tensor", "backward",
    "RichUNet", "RichUNetConfig", "build", "micro_config",
    "TrainConfig", "train", "evaluate", "net_from_checkpoint",
    "dice", "iou", "hd95", "mask_from_logits",
    "SplitMix64", "derive_seed",
    "RichUNetError", "ShapeError", "ConfigError", "UsageError",
    "DataError", "PgmError", "CheckpointError", "MetricUndefinedError",
    "NumericalError",
    "__version__",
]
