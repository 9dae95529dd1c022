"""Configuration, checkpoints, experiment drivers and the command line."""

from .config import Config, ConfigError, load_config
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = ["CheckpointError", "Config", "ConfigError", "load_checkpoint", "load_config",
           "save_checkpoint"]
