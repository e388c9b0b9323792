"""Performance metrics and association measures.

AUC uses average ranks, so tied scores count one half; on tie-free data it
equals 1 - U / (n_n * n_p) with U the Mann-Whitney statistic. Distance
statistics are V-statistics (double-centred distance matrices) computed with
``dcor``.
"""

from dataclasses import dataclass
from typing import Literal

import dcor
import numpy as np
from scipy import stats

from .errors import ContractError, DegenerateError, UndefinedMetricError

MetricId = Literal["auc", "accuracy", "mse", "mae", "pearson", "ccc"]
Orientation = Literal["higher_better", "lower_better"]


@dataclass(frozen=True)
class MetricSpec:
    id: MetricId
    orientation: Orientation
    # Random-guess value; stored for AUC only, other metrics use the standard null mean.
    baseline: float | None = None

    @property
    def higher_better(self) -> bool:
        return self.orientation == "higher_better"


METRICS: dict[str, MetricSpec] = {
    "auc": MetricSpec("auc", "higher_better", 0.5),
    "accuracy": MetricSpec("accuracy", "higher_better"),
    "mse": MetricSpec("mse", "lower_better"),
    "mae": MetricSpec("mae", "lower_better"),
    "pearson": MetricSpec("pearson", "higher_better"),
    "ccc": MetricSpec("ccc", "higher_better"),
}

CLASSIFICATION_METRICS = frozenset({"auc", "accuracy"})
# Squared-correlation denominators at or below this are treated as zero.
DEGENERATE_TOLERANCE = 1e-12


def metric_spec(metric_id: str) -> MetricSpec:
    try:
        return METRICS[metric_id]
    except KeyError:
        raise ContractError(
            f"Unknown metric {metric_id!r}; choose from {sorted(METRICS)}", field="metric"
        ) from None


def at_least_as_good(spec: MetricSpec, values, reference) -> np.ndarray:
    """Elementwise ``values`` is equal to or better than ``reference``."""
    values = np.asarray(values, dtype=float)
    return values >= reference if spec.higher_better else values <= reference


def is_better(spec: MetricSpec, a: float, b: float) -> bool:
    """Strictly better in the metric's orientation."""
    return a > b if spec.higher_better else a < b


def auc(y_true, scores) -> float:
    y = np.asarray(y_true, dtype=float)
    positive = y == 1
    n_p = int(positive.sum())
    n_n = y.size - n_p
    if n_p == 0 or n_n == 0:
        raise UndefinedMetricError("AUC needs both labels in y_true")
    ranks = stats.rankdata(np.asarray(scores, dtype=float))
    return float((ranks[positive].sum() - n_p * (n_p + 1) / 2.0) / (n_p * n_n))


def accuracy(y_true, scores) -> float:
    predicted = np.asarray(scores, dtype=float) >= 0.5
    return float(np.mean(predicted == (np.asarray(y_true) == 1)))


def mse(y_true, y_pred) -> float:
    return float(np.mean((np.asarray(y_true, float) - np.asarray(y_pred, float)) ** 2))


def mae(y_true, y_pred) -> float:
    return float(np.mean(np.abs(np.asarray(y_true, float) - np.asarray(y_pred, float))))


def pearson(x, y) -> float:
    xc = np.asarray(x, float) - np.mean(x)
    yc = np.asarray(y, float) - np.mean(y)
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if denom == 0.0:
        raise UndefinedMetricError("Correlation of a constant vector")
    return float(np.clip(np.sum(xc * yc) / denom, -1.0, 1.0))


def ccc(y_true, y_pred) -> float:
    """Concordance correlation with 1/n moments."""
    x = np.asarray(y_true, float)
    y = np.asarray(y_pred, float)
    sxy = np.mean((x - x.mean()) * (y - y.mean()))
    denom = x.var() + y.var() + (x.mean() - y.mean()) ** 2
    if denom == 0.0:
        raise UndefinedMetricError("CCC of two identical constants")
    return float(2.0 * sxy / denom)


_EVALUATORS = {
    "auc": auc,
    "accuracy": accuracy,
    "mse": mse,
    "mae": mae,
    "pearson": pearson,
    "ccc": ccc,
}


def evaluate(spec: MetricSpec, y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ContractError(f"y_true {y_true.shape} and y_pred {y_pred.shape} must be equal-length vectors")
    if y_true.size < 2:
        raise ContractError("Metrics need at least 2 observations")
    return _EVALUATORS[spec.id](y_true, y_pred)


def mann_whitney_u(auc_value: float, n_n: int, n_p: int) -> float:
    """U = n_n * n_p * (1 - AUC)."""
    return n_n * n_p * (1.0 - auc_value)


def auc_null_gaussian(n_n: int, n_p: int) -> tuple[float, float]:
    """Mean and sd of the AUC when neither response nor confounder is learned."""
    if n_n < 1 or n_p < 1:
        raise ContractError("Need at least one negative and one positive")
    return 0.5, float(np.sqrt((n_n + n_p + 1) / (12.0 * n_n * n_p)))


def _as_float(values) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(values, dtype=float))


def dcov2(x, y) -> float:
    """Squared sample distance covariance (V-statistic)."""
    x, y = _as_float(x), _as_float(y)
    if x.shape[0] != y.shape[0] or x.shape[0] < 2:
        raise ContractError("Distance covariance needs equal-length inputs with n >= 2")
    return max(float(dcor.distance_covariance_sqr(x, y)), 0.0)


def dcor2(x, y) -> float:
    """Squared sample distance correlation in [0, 1]; 0 when either dVar is 0."""
    x, y = _as_float(x), _as_float(y)
    if x.shape[0] != y.shape[0] or x.shape[0] < 2:
        raise ContractError("Distance correlation needs equal-length inputs with n >= 2")
    s = dcor.distance_stats_sqr(x, y)
    denom = float(s.variance_x) * float(s.variance_y)
    if denom <= 0.0:
        return 0.0
    return float(np.clip(float(s.covariance_xy) / np.sqrt(denom), 0.0, 1.0))


def partial_correlation(x, y, c) -> float:
    """Sample partial correlation from plug-in Pearson correlations."""
    r_xy = pearson(x, y)
    r_xc = pearson(x, c)
    r_yc = pearson(y, c)
    denom = (1.0 - r_xc**2) * (1.0 - r_yc**2)
    if denom <= DEGENERATE_TOLERANCE:
        raise DegenerateError("A variable is perfectly correlated with the confounder")
    return (r_xy - r_xc * r_yc) / np.sqrt(denom)


def pdcov(x, y, c) -> float:
    """dCov(X,Y)^2 - dCov(X,C)^2 dCov(Y,C)^2 / dVar(C)^2."""
    var_c = dcov2(c, c)
    if var_c <= 0.0:
        raise DegenerateError("Confounder has zero distance variance")
    return dcov2(x, y) - dcov2(x, c) * dcov2(y, c) / var_c


def pdcor(x, y, c) -> float:
    """(dCor(X,Y)^2 - dCor(X,C)^2 dCor(Y,C)^2) / sqrt((1 - dCor(X,C)^4)(1 - dCor(Y,C)^4))."""
    r_xc = dcor2(x, c)
    r_yc = dcor2(y, c)
    denom = (1.0 - r_xc**2) * (1.0 - r_yc**2)
    if denom <= DEGENERATE_TOLERANCE:
        raise DegenerateError("Distance correlation with the confounder is 1")
    return (dcor2(x, y) - r_xc * r_yc) / np.sqrt(denom)
