"""Configuration, experiment drivers and command-line interface."""

from .config import ExperimentConfig
from .manifest import RunManifest

__all__ = ["ExperimentConfig", "RunManifest"]
