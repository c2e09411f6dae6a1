"""Parameter-efficient fine-tuning of a small causal LM on exported planning
datasets, plus an OpenAI-style serving endpoint for drop-in evaluation."""

__version__ = "0.1.0"

from .train import PRESETS, TrainConfig, TrainResult, config_for_dialect, train

__all__ = [
    "PRESETS",
    "TrainConfig",
    "TrainResult",
    "config_for_dialect",
    "train",
    "__version__",
]
