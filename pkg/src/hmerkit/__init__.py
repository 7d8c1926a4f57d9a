"""Handwritten math expression recognition toolkit: labels, data, a small autodiff core and a two-viewer model."""

__version__ = "0.1.0"
