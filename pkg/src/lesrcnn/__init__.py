"""Lightweight image super-resolution with a heterogeneous CNN, in numpy."""

from .model import build_model, load_checkpoint, model_forward, save_checkpoint

__all__ = ["build_model", "load_checkpoint", "model_forward", "save_checkpoint"]
__version__ = "0.1.0"
