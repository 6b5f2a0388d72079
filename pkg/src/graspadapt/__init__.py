"""Desk-scale sim-to-real transfer study for grasp-success prediction."""

__version__ = "0.1.0"
