"""Steady-state weight-norm dynamics under decoupled and corrected weight decay."""

__version__ = "0.1.0"
