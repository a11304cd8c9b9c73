"""Atomic spin squeezing by weak measurement of a Faraday-rotation interaction."""

__version__ = "0.1.0"
