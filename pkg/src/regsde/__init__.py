"""Stochastic calculus via regularization and a transform-based SDE solver."""
__version__ = "0.1.0"
