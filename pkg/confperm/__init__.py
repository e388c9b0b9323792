"""Permutation inference for confounded machine-learning evaluations."""

__version__ = "0.1.0"
