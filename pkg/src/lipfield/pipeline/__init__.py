"""Training, inference, metrics, checkpoints and the command-line entry point."""

from .config import ConfigError, TrainConfig, load_config, save_config
from .model import Model, SceneInfo

__all__ = ["ConfigError", "Model", "SceneInfo", "TrainConfig", "load_config", "save_config"]
