"""Partial (distance) covariance and correlation from restricted-permutation expectations.

Linear estimators use plug-in (1/n) moments. With those, the restricted
expectation of cov(x, y*) has the closed form

    E[cov(x, y*)] = (1/n) * sum_s n_s * mean_s(x) * mean_s(y) - mean(x) * mean(y)

and cov(x, y) - E[cov(x, y*)] equals the dummy-coded partial covariance
exactly for a categorical confounder.
"""

import logging
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy import linalg

from .data import dummy_code
from .engine import PermutationRunner
from .errors import ContractError, DegenerateError
from .metrics import DEGENERATE_TOLERANCE, dcor2, dcov2, metric_spec, pdcor, pdcov, pearson
from .nulls import association_null
from .shuffle import enumerate_restricted, restricted_count

logger = logging.getLogger(__name__)

Estimator = Literal["pcov", "pcor", "pdcov", "pdcor"]
Mode = Literal["closed_form", "enumeration", "monte_carlo"]

MIN_DISTANCE_B = 100
ENUMERATION_CAP = 100_000


class PartialEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float
    estimator: Estimator
    expectation_mode: Mode
    b: int | None = None


def _inputs(x, y, c) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    c = np.asarray(c).astype(str).ravel()
    if not x.size == y.size == c.size:
        raise ContractError(f"Length mismatch: x {x.size}, y {y.size}, c {c.size}")
    if x.size < 2:
        raise ContractError("Need at least 2 observations")
    return x, y, c


def _cov(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(x * y) - x.mean() * y.mean())


def _within_variance(v: np.ndarray, c: np.ndarray) -> float:
    """Pooled within-stratum variance: sum_s n_s var_s / n."""
    _, codes = np.unique(c, return_inverse=True)
    means = np.bincount(codes, weights=v) / np.bincount(codes)
    return float(np.mean((v - means[codes]) ** 2))


def restricted_expectation_cov(x, y, c) -> float:
    x, y, c = _inputs(x, y, c)
    _, codes = np.unique(c, return_inverse=True)
    sizes = np.bincount(codes)
    x_means = np.bincount(codes, weights=x) / sizes
    y_means = np.bincount(codes, weights=y) / sizes
    return float(np.sum(sizes * x_means * y_means) / x.size - x.mean() * y.mean())


def _expectation(x, y, c, statistic, mode: Mode, b: int, seed: int, runner, cap: int) -> float:
    if mode == "enumeration":
        values = [statistic(x, y_star) for y_star in enumerate_restricted(y, c, cap=cap)]
        return float(np.mean(values))
    if mode == "monte_carlo":
        null = association_null(x, y, c, statistic, b, seed, metric=metric_spec("pearson"), runner=runner)
        return float(null.samples.mean())
    raise ContractError(f"No closed form for this statistic in mode {mode}", field="mode")


def pcov_perm(
    x,
    y,
    c,
    mode: Mode = "closed_form",
    *,
    b: int = 1000,
    seed: int = 0,
    runner: PermutationRunner | None = None,
    cap: int = ENUMERATION_CAP,
) -> PartialEstimate:
    """cov(x, y) - E[cov(x, y*)] over restricted permutations of y."""
    x, y, c = _inputs(x, y, c)
    if mode == "closed_form":
        expected = restricted_expectation_cov(x, y, c)
    else:
        expected = _expectation(x, y, c, _cov, mode, b, seed, runner, cap)
    return PartialEstimate(
        value=_cov(x, y) - expected,
        estimator="pcov",
        expectation_mode=mode,
        b=b if mode == "monte_carlo" else None,
    )


def pcor_perm(
    x,
    y,
    c,
    mode: Mode = "closed_form",
    *,
    b: int = 1000,
    seed: int = 0,
    runner: PermutationRunner | None = None,
    cap: int = ENUMERATION_CAP,
) -> PartialEstimate:
    """sqrt(Var X Var Y / (Var(X|C) Var(Y|C))) * (cor(x, y) - E[cor(x, y*)])."""
    x, y, c = _inputs(x, y, c)
    observed = pearson(x, y)
    if mode == "closed_form":
        # Restricted shuffles keep var(y), so E[cor] = E[cov] / (sd_x sd_y).
        expected = restricted_expectation_cov(x, y, c) / (x.std() * y.std())
    else:
        expected = _expectation(x, y, c, pearson, mode, b, seed, runner, cap)
    difference = observed - expected

    conditional = _within_variance(x, c) * _within_variance(y, c)
    if conditional <= 0.0:
        if abs(difference) <= 1e-12:
            # Singleton strata: the identity is the only restricted permutation.
            value = 0.0
        else:
            raise DegenerateError("Zero conditional variance given the confounder")
    else:
        value = float(np.sqrt(x.var() * y.var() / conditional) * difference)
    return PartialEstimate(
        value=value,
        estimator="pcor",
        expectation_mode=mode,
        b=b if mode == "monte_carlo" else None,
    )


def _check_distance_b(b: int) -> None:
    if b < MIN_DISTANCE_B:
        raise ContractError(f"Distance estimators need b >= {MIN_DISTANCE_B}, got {b}", field="b")


def pdcov_perm(x, y, c, b: int = 500, *, seed: int = 0, runner: PermutationRunner | None = None) -> PartialEstimate:
    """dCov(x, y)^2 - E[dCov(x, y*)^2], Monte Carlo over restricted permutations."""
    _check_distance_b(b)
    x, y, c = _inputs(x, y, c)
    expected = _expectation(x, y, c, dcov2, "monte_carlo", b, seed, runner, ENUMERATION_CAP)
    return PartialEstimate(value=dcov2(x, y) - expected, estimator="pdcov", expectation_mode="monte_carlo", b=b)


def pdcor_perm(x, y, c, b: int = 500, *, seed: int = 0, runner: PermutationRunner | None = None) -> PartialEstimate:
    _check_distance_b(b)
    x, y, c = _inputs(x, y, c)
    coded = confounder_matrix(c)
    denom = (1.0 - dcor2(x, coded) ** 2) * (1.0 - dcor2(y, coded) ** 2)
    if denom <= DEGENERATE_TOLERANCE:
        raise DegenerateError("Distance correlation with the confounder is 1")
    expected = _expectation(x, y, c, dcor2, "monte_carlo", b, seed, runner, ENUMERATION_CAP)
    return PartialEstimate(
        value=(dcor2(x, y) - expected) / np.sqrt(denom),
        estimator="pdcor",
        expectation_mode="monte_carlo",
        b=b,
    )


def confounder_matrix(c) -> np.ndarray:
    """Dummy-coded confounder; a binary confounder stays a vector."""
    coded = dummy_code(c)
    if coded.shape[1] == 0:
        return np.zeros(coded.shape[0])
    return coded[:, 0] if coded.shape[1] == 1 else coded


def _reference(fn, *args) -> float:
    try:
        return float(fn(*args))
    except DegenerateError as e:
        logger.warning("Reference value undefined: %s", e)
        return float("nan")


def _residual_moments(x: np.ndarray, y: np.ndarray, c: np.ndarray) -> tuple[float, float, float]:
    """Partial cov(x, y) and residual variances given dummy-coded c (1/n moments)."""
    D = dummy_code(c)
    if D.shape[1] == 0:
        return _cov(x, y), float(x.var()), float(y.var())
    Dc = D - D.mean(axis=0)
    xc, yc = x - x.mean(), y - y.mean()
    n = x.size
    var_d = Dc.T @ Dc / n
    cov_xd = Dc.T @ xc / n
    cov_yd = Dc.T @ yc / n
    try:
        solve_x = linalg.solve(var_d, cov_xd, assume_a="pos")
        solve_y = linalg.solve(var_d, cov_yd, assume_a="pos")
    except linalg.LinAlgError as e:
        raise DegenerateError(f"Confounder indicators are singular: {e}") from e
    return (
        _cov(x, y) - float(cov_yd @ solve_x),
        float(x.var() - cov_xd @ solve_x),
        float(y.var() - cov_yd @ solve_y),
    )


def pcov_definitional(x, y, c) -> float:
    """cov(X, Y) - cov(X, D) Var(D)^-1 cov(D, Y) with D the indicators of c."""
    x, y, c = _inputs(x, y, c)
    return _residual_moments(x, y, c)[0]


def pcor_definitional(x, y, c) -> float:
    x, y, c = _inputs(x, y, c)
    pcov, res_x, res_y = _residual_moments(x, y, c)
    if res_x <= 0.0 or res_y <= 0.0:
        raise DegenerateError("A variable is fully explained by the confounder")
    return pcov / np.sqrt(res_x * res_y)


def partials_table(
    x,
    y,
    c,
    modes: Sequence[Mode] = ("closed_form", "monte_carlo"),
    *,
    b: int = 1000,
    seed: int = 0,
    runner: PermutationRunner | None = None,
    cap: int = ENUMERATION_CAP,
) -> pd.DataFrame:
    """Permutation estimators next to their definitional counterparts."""
    x, y, c = _inputs(x, y, c)
    coded = confounder_matrix(c)
    references = {
        "pcov": pcov_definitional(x, y, c),
        "pcor": _reference(pcor_definitional, x, y, c),
        "pdcov": _reference(pdcov, x, y, coded),
        "pdcor": _reference(pdcor, x, y, coded),
    }

    estimates: list[PartialEstimate] = []
    for mode in modes:
        if mode == "enumeration" and restricted_count(c) > cap:
            logger.warning("Skipping enumeration: %d restricted permutations exceed %d", restricted_count(c), cap)
            continue
        estimates.append(pcov_perm(x, y, c, mode, b=b, seed=seed, runner=runner, cap=cap))
        estimates.append(pcor_perm(x, y, c, mode, b=b, seed=seed, runner=runner, cap=cap))
    distance_b = max(b, MIN_DISTANCE_B)
    estimates.append(pdcov_perm(x, y, c, distance_b, seed=seed, runner=runner))
    estimates.append(pdcor_perm(x, y, c, distance_b, seed=seed, runner=runner))

    rows = [
        {
            "estimator": e.estimator,
            "mode": e.expectation_mode,
            "value": e.value,
            "reference": references[e.estimator],
            "abs_gap": abs(e.value - references[e.estimator]),
        }
        for e in estimates
    ]
    return pd.DataFrame(rows, columns=["estimator", "mode", "value", "reference", "abs_gap"])
