"""Bracing-contact motion planning for torque-limited planar arms."""

__version__ = "0.1.0"
