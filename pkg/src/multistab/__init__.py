"""Multistability in networks of diffusively coupled excitable neurons."""

from .model import CouplingConfig, ModelParams

__all__ = ["CouplingConfig", "ModelParams"]
__version__ = "0.1.0"
