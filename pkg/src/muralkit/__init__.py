"""Restoration toolkit for low-light, defected mural photographs."""

__version__ = "0.1.0"
