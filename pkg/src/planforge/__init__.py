"""planforge: synthesize planning scenarios, elicit closed-loop plans from a
source planner through a deterministic text-world emulator, and export
loss-masked multi-turn fine-tuning datasets, with evaluation and latency
benchmarking built in."""

__version__ = "0.1.0"

from .envs import ObjectSetEnv, SceneGraph
from .goals import GoalSpec
from .scenarios import GenConfig, Scenario
from .elicit import ElicitConfig, Episode

__all__ = [
    "ObjectSetEnv",
    "SceneGraph",
    "GoalSpec",
    "GenConfig",
    "Scenario",
    "ElicitConfig",
    "Episode",
    "__version__",
]
