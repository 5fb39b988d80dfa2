"""
Cobra - bottleneck-token audio-visual fusion for speech recognition, at desk scale.
"""

from .config import EvalConfig, ModelConfig, RunConfig, SyntheticTaskSpec, load_config
from .errors import CobraError
from .model import CobraModel

__all__ = [
    "CobraError",
    "CobraModel",
    "EvalConfig",
    "ModelConfig",
    "RunConfig",
    "SyntheticTaskSpec",
    "load_config",
]
