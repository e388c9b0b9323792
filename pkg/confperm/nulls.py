"""Restricted and standard permutation nulls, p-values and Gaussian fits."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from .data import Dataset, SplitIndexes
from .engine import PermutationRunner, streams_for
from .errors import ContractError
from .learners import LearnerSpec, predict, train
from .metrics import MetricSpec, at_least_as_good, evaluate, metric_spec
from .shuffle import restricted_shuffle, standard_shuffle

logger = logging.getLogger(__name__)

Scheme = Literal["restricted", "standard", "baseline"]

FLOAT_FORMAT = "%.12g"


class GaussianFit(BaseModel):
    """Normal approximation of a null: sample mean ``a`` and sd ``s`` (ddof=1)."""
    model_config = ConfigDict(frozen=True)

    a: float
    s: float = Field(ge=0.0)


@dataclass(frozen=True)
class NullDistribution:
    samples: np.ndarray
    scheme: Scheme
    metric: MetricSpec
    master_seed: int
    test_size: int | None = None

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float).ravel()
        if samples.size < 1:
            raise ContractError("A null distribution needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ContractError("Null samples must be finite")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def b(self) -> int:
        return int(self.samples.size)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        pd.DataFrame({"value": self.samples}).to_csv(path, index=False, float_format=FLOAT_FORMAT)
        return path

    def summary(self) -> dict:
        return {
            "scheme": self.scheme,
            "metric": self.metric.id,
            "b": self.b,
            "mean": float(self.samples.mean()),
            "sd": float(self.samples.std(ddof=1)) if self.b > 1 else None,
            "min": float(self.samples.min()),
            "max": float(self.samples.max()),
            "master_seed": int(self.master_seed),
            "test_size": self.test_size,
        }


def score_permuted(
    train_ds: Dataset,
    test_ds: Dataset,
    learner: LearnerSpec,
    metric: MetricSpec,
    y_train: np.ndarray,
    y_test: np.ndarray,
) -> float:
    """One train/evaluate cycle on (possibly shuffled) responses."""
    model = train(learner, train_ds.features, y_train)
    return evaluate(metric, y_test, predict(model, test_ds.features))


def observed_metric(ds: Dataset, split: SplitIndexes, learner: LearnerSpec, metric: MetricSpec) -> float:
    train_ds, test_ds = split.apply(ds)
    return score_permuted(train_ds, test_ds, learner, metric, train_ds.response, test_ds.response)


def _check_task(ds: Dataset, metric: MetricSpec) -> None:
    if metric.id in ("auc", "accuracy") and ds.task != "classification":
        raise ContractError(f"Metric {metric.id} needs a classification task", field="metric")


def _permutation_null(
    ds: Dataset,
    split: SplitIndexes,
    learner: LearnerSpec,
    metric: MetricSpec,
    b: int,
    seed: int,
    scheme: Scheme,
    runner: PermutationRunner | None,
) -> NullDistribution:
    if b < 1:
        raise ContractError(f"b must be >= 1, got {b}", field="b")
    _check_task(ds, metric)
    train_ds, test_ds = split.apply(ds)
    restricted = scheme != "standard"

    def job(stream, gen):
        if restricted:
            y_train = restricted_shuffle(train_ds.response, train_ds.confounder, gen)
            y_test = restricted_shuffle(test_ds.response, test_ds.confounder, gen)
        else:
            y_train = standard_shuffle(train_ds.response, gen)
            y_test = standard_shuffle(test_ds.response, gen)
        return score_permuted(train_ds, test_ds, learner, metric, y_train, y_test)

    logger.info("Building %s null: metric=%s b=%d test_size=%d", scheme, metric.id, b, split.test_size)
    samples = (runner or PermutationRunner()).run(job, streams_for(seed, b))
    return NullDistribution(samples, scheme, metric, seed, split.test_size)


def restricted_null(
    ds: Dataset,
    split: SplitIndexes,
    learner: LearnerSpec,
    metric: MetricSpec,
    b: int,
    seed: int,
    *,
    runner: PermutationRunner | None = None,
    scheme: Scheme = "restricted",
) -> NullDistribution:
    """Shuffle train and test responses within confounder levels, retrain, rescore."""
    if scheme == "standard":
        raise ContractError("Use standard_null for unrestricted shuffles")
    return _permutation_null(ds, split, learner, metric, b, seed, scheme, runner)


def standard_null(
    ds: Dataset,
    split: SplitIndexes,
    learner: LearnerSpec,
    metric: MetricSpec,
    b: int,
    seed: int,
    *,
    runner: PermutationRunner | None = None,
) -> NullDistribution:
    return _permutation_null(ds, split, learner, metric, b, seed, "standard", runner)


def association_null(
    x: np.ndarray,
    y: np.ndarray,
    c: np.ndarray,
    statistic: Callable[[np.ndarray, np.ndarray], float],
    b: int,
    seed: int,
    scheme: Scheme = "restricted",
    *,
    metric: MetricSpec | None = None,
    runner: PermutationRunner | None = None,
) -> NullDistribution:
    """Null of ``statistic(x, y*)`` without a learner (y shuffled, x fixed)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] != y.shape[0] or y.shape[0] != np.asarray(c).shape[0]:
        raise ContractError("x, y and c must have equal lengths")
    if b < 1:
        raise ContractError(f"b must be >= 1, got {b}", field="b")

    def job(stream, gen):
        shuffled = standard_shuffle(y, gen) if scheme == "standard" else restricted_shuffle(y, c, gen)
        return statistic(x, shuffled)

    samples = (runner or PermutationRunner()).run(job, streams_for(seed, b))
    return NullDistribution(samples, scheme, metric or metric_spec("pearson"), seed)


def p_value(null: NullDistribution, observed: float) -> float:
    """Add-one permutation p-value: (1 + #{samples at least as good}) / (b + 1)."""
    k = int(np.count_nonzero(at_least_as_good(null.metric, null.samples, observed)))
    return (1.0 + k) / (null.b + 1.0)


def fit_gaussian(null: NullDistribution) -> GaussianFit:
    if null.b < 2:
        raise ContractError("A Gaussian fit needs b >= 2", field="b")
    return GaussianFit(a=float(null.samples.mean()), s=float(null.samples.std(ddof=1)))


def ks_distance(null: NullDistribution) -> float:
    """Kolmogorov-Smirnov distance between the samples and their fitted normal."""
    fit = fit_gaussian(null)
    if fit.s == 0.0:
        return 1.0
    return float(stats.kstest(null.samples, "norm", args=(fit.a, fit.s)).statistic)


def describe_p_value(p: float, b: int) -> str:
    """Text for reports; at the add-one floor the value is shown as a bound."""
    if p <= 1.0 / (b + 1.0) + 1e-15:
        return f"< {0.99 / b:.2g}"
    return f"{p:.3g}"
