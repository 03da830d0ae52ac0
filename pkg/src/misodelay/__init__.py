"""Delay-violation bounds for multi-antenna fading links via Mellin transforms."""

__version__ = "0.1.0"
