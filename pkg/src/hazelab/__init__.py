"""Haze synthesis, classical and learned dehazing, and evaluation tools."""

__version__ = "0.1.0"
