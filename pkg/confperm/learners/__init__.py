"""Built-in learners trained inside permutation loops."""

from .model import LearnerSpec, Model, Standardizer, train, predict

__all__ = [
    "LearnerSpec",
    "Model",
    "Standardizer",
    "train",
    "predict",
]
