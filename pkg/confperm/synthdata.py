"""Synthetic data for the simulation studies and the maximin Latin hypercube design."""

import logging
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg
from scipy.spatial.distance import pdist

from .data import Dataset
from .errors import ContractError, DegenerateError

logger = logging.getLogger(__name__)

EXPOSED_LEVEL = "M"
UNEXPOSED_LEVEL = "F"
JOINT_TOLERANCE = 1e-12


class BernoulliJoint(BaseModel):
    """p_ij = P(Y = i, C = j)."""
    model_config = ConfigDict(frozen=True)

    p11: float = Field(ge=0.0)
    p10: float = Field(ge=0.0)
    p01: float = Field(ge=0.0)
    p00: float = Field(ge=0.0)

    @model_validator(mode="after")
    def _sums_to_one(self) -> "BernoulliJoint":
        total = self.p11 + self.p10 + self.p01 + self.p00
        if abs(total - 1.0) > JOINT_TOLERANCE:
            raise ValueError(f"cell probabilities sum to {total:.15g}, not 1")
        return self

    @classmethod
    def renormalized(cls, p11: float, p10: float, p01: float, p00: float) -> "BernoulliJoint":
        total = p11 + p10 + p01 + p00
        return cls(p11=p11 / total, p10=p10 / total, p01=p01 / total, p00=p00 / total)

    @classmethod
    def symmetric(cls, correlation: float) -> "BernoulliJoint":
        """Balanced margins with p11 = p00 and the given Cor(Y, C)."""
        if not -1.0 <= correlation <= 1.0:
            raise ContractError(f"correlation {correlation} outside [-1, 1]")
        same = 0.25 + correlation / 4.0
        return cls(p11=same, p10=0.5 - same, p01=0.5 - same, p00=same)

    @property
    def cells(self) -> np.ndarray:
        return np.array([self.p11, self.p10, self.p01, self.p00])

    @property
    def covariance(self) -> float:
        return self.p11 * self.p00 - self.p01 * self.p10

    @property
    def correlation(self) -> float:
        p_y = self.p11 + self.p10
        p_c = self.p11 + self.p01
        spread = p_y * (1 - p_y) * p_c * (1 - p_c)
        return self.covariance / np.sqrt(spread) if spread > 0 else 0.0


class ClassGenParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=4)
    joint: BernoulliJoint
    beta: float = 0.0
    theta: float = 0.0
    rho: float = Field(0.5, gt=-1.0, lt=1.0)
    p: int = Field(10, ge=1)


class CorrGenParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float = Field(gt=0.0, lt=1.0)
    beta_xc: float = 0.0
    beta_yc: float = 0.0
    beta_xy: float = 0.0
    n: int = Field(1000, ge=2)


class RegGenParams(BaseModel):
    """Continuous response y = effect_cy * c + e with features ~ MVN((y beta + c theta) 1, AR(1))."""
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=4)
    c_prob: float = Field(0.5, gt=0.0, lt=1.0)
    effect_cy: float = 0.0
    beta: float = 0.0
    theta: float = 0.0
    rho: float = Field(0.5, gt=-1.0, lt=1.0)
    p: int = Field(10, ge=1)
    error: Literal["gaussian", "exponential"] = "gaussian"


def sample_bivariate_bernoulli(joint: BernoulliJoint, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    cells = rng.choice(4, size=n, p=joint.cells)
    y = np.array([1, 1, 0, 0])[cells]
    c = np.array([1, 0, 1, 0])[cells]
    return y, c


def ar1_cholesky(rho: float, p: int) -> np.ndarray:
    sigma = linalg.toeplitz(rho ** np.arange(p))
    try:
        return linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError as e:
        raise DegenerateError(f"AR(1) covariance with rho={rho} is not positive definite") from e


def _features(mean: np.ndarray, rho: float, p: int, rng: np.random.Generator) -> np.ndarray:
    chol = ar1_cholesky(rho, p)
    noise = rng.standard_normal((mean.size, p))
    return mean[:, None] + noise @ chol.T


def _confounder_levels(c: np.ndarray) -> np.ndarray:
    return np.where(c == 1, EXPOSED_LEVEL, UNEXPOSED_LEVEL)


def gen_classification(params: ClassGenParams, rng: np.random.Generator) -> Dataset:
    y, c = sample_bivariate_bernoulli(params.joint, params.n, rng)
    X = _features(y * params.beta + c * params.theta, params.rho, params.p, rng)
    return Dataset(
        features=X,
        response=y,
        confounder=_confounder_levels(c),
        task="classification",
        labels=("0", "1"),
    )


def gen_correlation_model(params: CorrGenParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """c ~ Bernoulli(p); y ~ N(beta_yc c, 1); x ~ N(beta_xc c + beta_xy y, 1)."""
    c = (rng.random(params.n) < params.p).astype(int)
    y = params.beta_yc * c + rng.standard_normal(params.n)
    x = params.beta_xc * c + params.beta_xy * y + rng.standard_normal(params.n)
    return x, y, c


def gen_regression(params: RegGenParams, rng: np.random.Generator) -> Dataset:
    c = (rng.random(params.n) < params.c_prob).astype(int)
    if params.error == "exponential":
        # Rate-1 exponential shifted to mean zero.
        errors = rng.exponential(1.0, params.n) - 1.0
    else:
        errors = rng.standard_normal(params.n)
    y = params.effect_cy * c + errors
    X = _features(y * params.beta + c * params.theta, params.rho, params.p, rng)
    return Dataset(features=X, response=y, confounder=_confounder_levels(c), task="regression")


class ParameterRange(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    lo: float
    hi: float
    integer: bool = False

    @field_validator("hi")
    @classmethod
    def _ordered(cls, hi: float, info) -> float:
        if hi < info.data.get("lo", hi):
            raise ValueError("hi must be >= lo")
        return hi

    def scale(self, u: np.ndarray) -> np.ndarray:
        if self.integer:
            width = int(self.hi) - int(self.lo) + 1
            return np.minimum(int(self.lo) + np.floor(u * width), self.hi).astype(int)
        return self.lo + u * (self.hi - self.lo)


def _min_distance(unit: np.ndarray) -> float:
    return float(pdist(unit).min())


def lhs_unit(n_points: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """One point per [k/n, (k+1)/n) stratum in every column."""
    return np.column_stack([(rng.permutation(n_points) + rng.random(n_points)) / n_points for _ in range(d)])


def lhs_maximin(
    ranges: Sequence[ParameterRange],
    n_points: int,
    n_sweeps: int,
    rng: np.random.Generator,
) -> pd.DataFrame:
    """Latin hypercube improved by column-wise pair swaps that keep the minimum distance from shrinking.

    Swapping two entries of a column keeps it Latin, so every column stays
    stratified while the minimum pairwise distance (unit cube) is non-decreasing.
    """
    if n_points < 2:
        raise ContractError("A design needs at least 2 points")
    if not ranges:
        raise ContractError("A design needs at least one parameter range")
    unit = lhs_unit(n_points, len(ranges), rng)
    best = _min_distance(unit)
    start = best
    for _ in range(n_sweeps):
        j = rng.integers(len(ranges))
        a, b = rng.choice(n_points, size=2, replace=False)
        unit[[a, b], j] = unit[[b, a], j]
        candidate = _min_distance(unit)
        if candidate >= best:
            best = candidate
        else:
            unit[[a, b], j] = unit[[b, a], j]
    logger.debug("Maximin design: min distance %.4g -> %.4g over %d sweeps", start, best, n_sweeps)
    return pd.DataFrame({r.name: r.scale(unit[:, k]) for k, r in enumerate(ranges)})


DESIGN_COLUMNS = ["n", "p11", "p10", "p01", "p00", "beta", "theta", "rho"]

_SHARED_RANGES = [
    ParameterRange(name="n", lo=200, hi=600, integer=True),
    ParameterRange(name="p11", lo=0.40, hi=0.45),
    ParameterRange(name="p00", lo=0.40, hi=0.45),
]
_P10 = ParameterRange(name="p10", lo=0.050, hi=0.075)
_BETA = ParameterRange(name="beta", lo=0.1, hi=1.0)
_THETA = ParameterRange(name="theta", lo=0.1, hi=1.0)
_RHO = ParameterRange(name="rho", lo=0.2, hi=0.8)

# experiment -> (response signal, confounding signal)
EXPERIMENTS: dict[int, tuple[bool, bool]] = {
    1: (True, True),
    2: (True, False),
    3: (False, True),
    4: (False, False),
}


def experiment_ranges(experiment_id: int) -> list[ParameterRange]:
    if experiment_id not in EXPERIMENTS:
        raise ContractError(f"Unknown experiment {experiment_id}; choose 1-4", field="experiments")
    response, confounding = EXPERIMENTS[experiment_id]
    ranges = list(_SHARED_RANGES)
    if confounding:
        ranges.append(_P10)
    if response:
        ranges.append(_BETA)
    if confounding:
        ranges.append(_THETA)
    ranges.append(_RHO)
    return ranges


def experiment_design(
    experiment_id: int,
    n_points: int,
    rng: np.random.Generator,
    n_sweeps: int = 200,
) -> pd.DataFrame:
    """Parameter table for one experiment (columns ``DESIGN_COLUMNS``)."""
    response, confounding = EXPERIMENTS.get(experiment_id, (None, None))
    design = lhs_maximin(experiment_ranges(experiment_id), n_points, n_sweeps, rng)
    if confounding:
        design["p01"] = 1.0 - design["p11"] - design["p00"] - design["p10"]
        if (design["p01"] <= 0).any():
            raise ContractError("Parameter ranges leave p01 <= 0")
    else:
        # Y independent of C: p10 = p11, p01 = p00, then re-normalized.
        total = 2.0 * (design["p11"] + design["p00"])
        design["p11"] = design["p11"] / total
        design["p00"] = design["p00"] / total
        design["p10"] = design["p11"]
        design["p01"] = design["p00"]
        design["theta"] = 0.0
    if not response:
        design["beta"] = 0.0
    return design[DESIGN_COLUMNS]


def class_params_from_row(row: pd.Series, p: int = 10) -> ClassGenParams:
    return ClassGenParams(
        n=int(row["n"]),
        joint=BernoulliJoint.renormalized(row["p11"], row["p10"], row["p01"], row["p00"]),
        beta=float(row["beta"]),
        theta=float(row["theta"]),
        rho=float(row["rho"]),
        p=p,
    )


def draw_correlation_params(rng: np.random.Generator, n: int = 1000) -> CorrGenParams:
    """p ~ U(0.3, 0.7) and each beta ~ U(-3, 3)."""
    p = rng.uniform(0.3, 0.7)
    beta_xc, beta_yc, beta_xy = rng.uniform(-3.0, 3.0, size=3)
    return CorrGenParams(p=p, beta_xc=beta_xc, beta_yc=beta_yc, beta_xy=beta_xy, n=n)
