"""Referring image segmentation on synthetic scenes, from scratch in numpy."""

__version__ = "0.1.0"
