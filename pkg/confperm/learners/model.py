"""Learner specification, fitted models and the train/predict entry points."""

from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from ..errors import ContractError, LearnerError
from .logistic import fit_logistic
from .ols import fit_ols


class LearnerSpec(BaseModel):
    """Built-in learner and its hyperparameters (config keys ``learner.*``)."""
    model_config = ConfigDict(populate_by_name=True, frozen=True, extra="forbid")

    kind: Literal["logistic", "ols"] = "logistic"
    l2_penalty: float = Field(1e-3, ge=0.0, alias="l2", description="Ridge penalty on standardized slopes.")
    max_iters: int = Field(100, ge=1)
    tol: float = Field(1e-8, gt=0.0, description="Gradient max-norm at which Newton stops.")


@dataclass(frozen=True)
class Model:
    """Weights in the original feature scale, intercept first."""
    weights: np.ndarray
    kind: Literal["logistic", "ols"]

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).ravel()
        if not np.all(np.isfinite(weights)):
            raise LearnerError("Model weights are not finite")
        object.__setattr__(self, "weights", weights)

    @property
    def p(self) -> int:
        return self.weights.size - 1


@dataclass(frozen=True)
class Standardizer:
    """Train-set column scaling; constant columns are masked out of the fit."""
    mean: np.ndarray
    scale: np.ndarray
    keep: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        keep = scale > 1e-12 * np.maximum(1.0, np.abs(mean))
        return cls(mean=mean, scale=np.where(keep, scale, 1.0), keep=keep)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return ((X - self.mean) / self.scale)[:, self.keep]

    def fold(self, intercept: float, slopes: np.ndarray) -> np.ndarray:
        """Map standardized (intercept, slopes) back to the original scale."""
        full = np.zeros(self.mean.size)
        full[self.keep] = slopes / self.scale[self.keep]
        return np.concatenate([[intercept - full @ self.mean], full])


def train(spec: LearnerSpec, X: np.ndarray, y: np.ndarray) -> Model:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ContractError(f"X has shape {X.shape} but y has {y.size} values")
    if y.size < 2:
        raise LearnerError("Need at least 2 training rows")

    scaler = Standardizer.fit(X)
    Z = scaler.transform(X)
    if spec.kind == "logistic":
        if np.unique(y).size < 2:
            raise LearnerError("Logistic regression needs both labels in the training set")
        intercept, slopes = fit_logistic(Z, y, spec.l2_penalty, spec.max_iters, spec.tol)
    else:
        intercept, slopes = fit_ols(Z, y, spec.l2_penalty)
    return Model(weights=scaler.fold(intercept, slopes), kind=spec.kind)


def predict(model: Model, X: np.ndarray) -> np.ndarray:
    """Probabilities for logistic models, real predictions for OLS."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.p:
        raise ContractError(f"Model expects {model.p} features, got shape {X.shape}")
    eta = model.weights[0] + X @ model.weights[1:]
    return expit(eta) if model.kind == "logistic" else eta
