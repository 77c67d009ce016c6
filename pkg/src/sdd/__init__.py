"""Causal speech denoising + dereverberation engine."""

__version__ = "0.1.0"
