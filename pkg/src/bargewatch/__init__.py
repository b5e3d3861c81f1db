"""Barge and vessel traffic monitoring from inland-waterway traffic cameras."""

__version__ = "0.1.0"
