"""Pulse-EPR relaxometry workbench."""

__version__ = "0.1.0"
