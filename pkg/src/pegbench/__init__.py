"""Desk-scale workbench for structured human-in-the-loop RL on a planar
compliant insertion task under adaptive per-axis force limits."""

__version__ = "0.1.0"
