"""Data contracts for run configs and checkpoints."""

from .checkpoint import CheckpointContract, load_classifier, load_denoiser, save_checkpoint
from .run_config import RunConfig

__all__ = ["CheckpointContract", "RunConfig", "load_classifier", "load_denoiser", "save_checkpoint"]
