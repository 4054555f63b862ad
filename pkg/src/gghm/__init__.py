"""Episodic few-shot matching engine over feature maps."""

__version__ = "0.1.0"
