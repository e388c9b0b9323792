"""Least squares on standardized features, ridge-stabilized when l2 > 0."""

import numpy as np
from scipy import linalg

from ..errors import SingularMatrixError


def fit_ols(Z: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Return (intercept, slopes) solving (Z'Z/n + l2 I) w = Z'(y - ybar)/n."""
    n, d = Z.shape
    intercept = float(y.mean())
    if d == 0:
        return intercept, np.zeros(0)
    if l2 == 0.0 and np.linalg.matrix_rank(Z) < d:
        raise SingularMatrixError("Rank-deficient design; set learner.l2 > 0")
    gram = Z.T @ Z / n + l2 * np.eye(d)
    rhs = Z.T @ (y - intercept) / n
    try:
        slopes = linalg.solve(gram, rhs, assume_a="pos")
    except linalg.LinAlgError as e:
        raise SingularMatrixError(f"Normal equations are singular: {e}") from e
    return intercept, slopes
