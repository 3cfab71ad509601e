"""Replica-symmetric computations for random factor graph models."""

__version__ = "0.1.0"
