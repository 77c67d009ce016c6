"""Stagewise trainer for the speech denoise/dereverb engine."""

__version__ = "0.1.0"
