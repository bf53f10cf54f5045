"""Online calibrated regression on arbitrary data streams."""

__version__ = "0.1.0"
