"""Adaptive attention-based localization over synthetic beam-space channels."""
__version__ = "0.1.0"
