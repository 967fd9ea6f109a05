"""Optimal data allocation for one-step MAML on mixed linear regression."""

__version__ = "0.1.0"
