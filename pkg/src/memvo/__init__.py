"""Deep visual odometry with an adaptive memory and attention refinement."""

from .tensor import Tensor
from .geometry import Pose6DoF
from .net import VONet, PRESETS, load_checkpoint, save_checkpoint
from .memory import MemoryBuffer, MemoryPolicy
from .training import TrainConfig, train, sliding_window_infer
from .synthetic import SyntheticSpec, generate_sequence

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Pose6DoF", "VONet", "PRESETS", "load_checkpoint",
    "save_checkpoint", "MemoryBuffer", "MemoryPolicy", "TrainConfig",
    "train", "sliding_window_infer", "SyntheticSpec", "generate_sequence",
    "__version__",
]
