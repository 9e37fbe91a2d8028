"""Magnetic indoor localization with dilated CNN regression and rotation-invariant inputs."""

__version__ = "0.1.0"
