"""L2-penalized logistic regression fitted by Newton/IRLS with step halving.

Works on standardized features. The objective is the mean log-loss plus
``l2/2 * ||slopes||^2``; the intercept is not penalized.
"""

import logging

import numpy as np
from scipy import linalg
from scipy.special import expit

logger = logging.getLogger(__name__)

MAX_HALVINGS = 50


def _design(Z: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((Z.shape[0], 1)), Z])


def _penalty_mask(d: int) -> np.ndarray:
    mask = np.ones(d)
    mask[0] = 0.0
    return mask


def objective(w: np.ndarray, Z: np.ndarray, y: np.ndarray, l2: float) -> float:
    eta = _design(Z) @ w
    loss = np.mean(np.logaddexp(0.0, eta) - y * eta)
    return float(loss + 0.5 * l2 * np.sum((w * _penalty_mask(w.size)) ** 2))


def gradient(w: np.ndarray, Z: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    A = _design(Z)
    p = expit(A @ w)
    return A.T @ (p - y) / y.size + l2 * w * _penalty_mask(w.size)


def hessian(w: np.ndarray, Z: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    A = _design(Z)
    p = expit(A @ w)
    weights = p * (1.0 - p)
    return (A.T * weights) @ A / y.size + l2 * np.diag(_penalty_mask(w.size))


def _newton_direction(H: np.ndarray, g: np.ndarray) -> np.ndarray | None:
    if not np.all(np.isfinite(H)):
        return None
    try:
        step = linalg.solve(H, g, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        return None
    return step if np.all(np.isfinite(step)) else None


def fit_logistic(
    Z: np.ndarray,
    y: np.ndarray,
    l2: float,
    max_iters: int,
    tol: float,
) -> tuple[float, np.ndarray]:
    """Return (intercept, slopes) on the standardized scale."""
    w = np.zeros(Z.shape[1] + 1)
    mean_y = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    w[0] = np.log(mean_y / (1.0 - mean_y))
    f = objective(w, Z, y, l2)

    for iteration in range(max_iters):
        g = gradient(w, Z, y, l2)
        if np.max(np.abs(g)) <= tol:
            break
        step = _newton_direction(hessian(w, Z, y, l2), g)
        if step is None:
            # Gradient descent fallback when the Hessian is unusable.
            step = g
        t = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = w - t * step
            f_new = objective(candidate, Z, y, l2)
            if np.isfinite(f_new) and f_new <= f:
                break
            t *= 0.5
        else:
            logger.debug("Step halving exhausted at iteration %d", iteration)
            break
        w, f = candidate, f_new
    else:
        logger.debug("Newton did not reach tol=%g in %d iterations", tol, max_iters)

    return float(w[0]), w[1:]
