"""Response-learning and confounding tests, and confounding-corrected metrics.

Corrections match p-values between the restricted null and a reference
null (standard permutations, the analytic AUC null, or a baseline null
built on a population-of-interest subsample)::

    m_c = (m_o - a_restricted) * s_reference / s_restricted + a_reference
"""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from .data import Dataset, JointTable, SplitIndexes, split, subsample_to_joint
from .engine import PermutationRunner
from .errors import ContractError, DegenerateError, SplitError
from .learners import LearnerSpec
from .metrics import MetricSpec, auc_null_gaussian
from .nulls import (
    GaussianFit,
    NullDistribution,
    fit_gaussian,
    observed_metric,
    p_value,
    restricted_null,
    score_permuted,
)
from .shuffle import RngStream, derive_seed, restricted_shuffle, standard_shuffle

logger = logging.getLogger(__name__)

TestId = Literal["response_learning", "confounding", "confounding_exact", "confounding_vs_baseline"]
Method = Literal["empirical", "gaussian", "analytic_auc", "baseline"]

MIN_EMPIRICAL_B = 20
# Stream family tag for the confounder-shuffling outer loop of the exact test.
EXACT_TEST_TAG = 2
BASELINE_TAG = 1


class TestResult(BaseModel):
    model_config = ConfigDict(frozen=True)
    __test__ = False

    test_id: TestId
    statistic: float
    p_value: float = Field(gt=0.0, le=1.0)
    null_summary: GaussianFit | None = None
    b: int = Field(ge=1)


class CorrectionResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    m_o: float
    m_c: float
    method: Method
    restricted_fit: GaussianFit | None = None
    reference_fit: GaussianFit | None = None


class AnalyticAucNull(BaseModel):
    """AUC of a learner that learned neither the response nor the confounder."""
    model_config = ConfigDict(frozen=True)

    n_n: int = Field(ge=1)
    n_p: int = Field(ge=1)

    @property
    def fit(self) -> GaussianFit:
        a, s = auc_null_gaussian(self.n_n, self.n_p)
        return GaussianFit(a=a, s=s)


def response_learning_test(null_r: NullDistribution, m_o: float) -> TestResult:
    if null_r.scheme not in ("restricted", "baseline"):
        raise ContractError(f"Response-learning test needs a restricted null, got {null_r.scheme}")
    return TestResult(
        test_id="response_learning",
        statistic=m_o,
        p_value=p_value(null_r, m_o),
        null_summary=fit_gaussian(null_r) if null_r.b > 1 else None,
        b=null_r.b,
    )


def _p_matched(m_o: float, fit_r: GaussianFit, fit_ref: GaussianFit) -> float:
    if fit_r.s <= 0.0:
        raise DegenerateError("Restricted null has zero spread; the correction is undefined")
    return (m_o - fit_r.a) * fit_ref.s / fit_r.s + fit_ref.a


def correct_gaussian(m_o: float, fit_r: GaussianFit, fit_s: GaussianFit) -> CorrectionResult:
    return CorrectionResult(
        m_o=m_o, m_c=_p_matched(m_o, fit_r, fit_s), method="gaussian", restricted_fit=fit_r, reference_fit=fit_s
    )


def correct_empirical(m_o: float, null_r: NullDistribution, null_s: NullDistribution) -> CorrectionResult:
    """Quantile of the standard null at the restricted-null percentile of m_o.

    Values outside the restricted null's range map to the standard null's
    extremes, so corrected values are truncated to that range.
    """
    if null_r.metric != null_s.metric:
        raise ContractError("Both nulls must use the same metric")
    if min(null_r.b, null_s.b) < MIN_EMPIRICAL_B:
        raise ContractError(f"Empirical correction needs b >= {MIN_EMPIRICAL_B} in both nulls", field="b")
    percentile = float(np.mean(null_r.samples <= m_o))
    m_c = float(np.quantile(null_s.samples, percentile))
    return CorrectionResult(
        m_o=m_o,
        m_c=m_c,
        method="empirical",
        restricted_fit=fit_gaussian(null_r),
        reference_fit=fit_gaussian(null_s),
    )


def correct_auc_analytic(auc_o: float, fit_r: GaussianFit, n_n: int, n_p: int) -> CorrectionResult:
    # sigma / s_restricted; the printed closed form drops the square root on sigma.
    reference = AnalyticAucNull(n_n=n_n, n_p=n_p).fit
    return CorrectionResult(
        m_o=auc_o,
        m_c=_p_matched(auc_o, fit_r, reference),
        method="analytic_auc",
        restricted_fit=fit_r,
        reference_fit=reference,
    )


def correct_baseline(m_o: float, fit_r: GaussianFit, fit_baseline: GaussianFit) -> CorrectionResult:
    return CorrectionResult(
        m_o=m_o,
        m_c=_p_matched(m_o, fit_r, fit_baseline),
        method="baseline",
        restricted_fit=fit_r,
        reference_fit=fit_baseline,
    )


def _one_sided_p(null_r: NullDistribution, reference: GaussianFit, b: int) -> tuple[float, float]:
    if reference.s <= 0.0:
        raise DegenerateError("Reference null has zero spread")
    statistic = float(null_r.samples.mean())
    z = (statistic - reference.a) / (reference.s / np.sqrt(b))
    p = stats.norm.sf(z) if null_r.metric.higher_better else stats.norm.cdf(z)
    return statistic, float(max(p, np.finfo(float).tiny))


def _check_b(null_r: NullDistribution, b: int) -> None:
    if b != null_r.b:
        raise ContractError(f"b={b} but the restricted null has {null_r.b} samples", field="b")
    if null_r.test_size is not None and b != null_r.test_size:
        raise ContractError(
            f"The confounding test needs b equal to the test-set size ({null_r.test_size}), got {b}", field="b"
        )


def confounding_test(
    null_r: NullDistribution,
    reference: GaussianFit | AnalyticAucNull,
    b: int,
) -> TestResult:
    """One-sided z-test of the restricted-null mean against N(a, s^2 / b)."""
    _check_b(null_r, b)
    fit = reference.fit if isinstance(reference, AnalyticAucNull) else reference
    statistic, p = _one_sided_p(null_r, fit, b)
    return TestResult(test_id="confounding", statistic=statistic, p_value=p, null_summary=fit, b=b)


def confounding_vs_baseline_test(null_r: NullDistribution, fit_baseline: GaussianFit, b: int) -> TestResult:
    """Is the development restricted null shifted beyond the baseline null?"""
    _check_b(null_r, b)
    statistic, p = _one_sided_p(null_r, fit_baseline, b)
    return TestResult(test_id="confounding_vs_baseline", statistic=statistic, p_value=p, null_summary=fit_baseline, b=b)


def confounding_test_exact(
    ds: Dataset,
    split_idx: SplitIndexes,
    learner: LearnerSpec,
    metric: MetricSpec,
    b_s: int,
    seed: int,
    *,
    null_r: NullDistribution | None = None,
    runner: PermutationRunner | None = None,
) -> TestResult:
    """Double-shuffle test: null of the restricted-null mean under shuffled confounders.

    Outer draw i shuffles the training and test confounders (standard
    shuffles); the inner loop runs ``test_size`` restricted shuffles of the
    response against them. Inner iterations use streams (i, j) of a
    dedicated seed family.
    """
    if b_s < MIN_EMPIRICAL_B:
        raise ContractError(f"b_s must be >= {MIN_EMPIRICAL_B}, got {b_s}", field="b_s")
    b_r = split_idx.test_size
    runner = runner or PermutationRunner()
    if null_r is None:
        null_r = restricted_null(ds, split_idx, learner, metric, b_r, seed, runner=runner)
    elif null_r.b != b_r:
        raise ContractError(f"Observed null has b={null_r.b}, expected the test size {b_r}", field="b")
    observed = float(null_r.samples.mean())

    train_ds, test_ds = split_idx.apply(ds)
    family = derive_seed(seed, EXACT_TEST_TAG)
    confounders = []
    for i in range(b_s):
        gen = RngStream(family, i).generator()
        confounders.append((standard_shuffle(train_ds.confounder, gen), standard_shuffle(test_ds.confounder, gen)))

    def job(stream, gen):
        c_train, c_test = confounders[stream.stream_index[0]]
        y_train = restricted_shuffle(train_ds.response, c_train, gen)
        y_test = restricted_shuffle(test_ds.response, c_test, gen)
        return score_permuted(train_ds, test_ds, learner, metric, y_train, y_test)

    streams = [RngStream(family, (i, j)) for i in range(b_s) for j in range(b_r)]
    logger.info("Exact confounding test: %d x %d cycles", b_s, b_r)
    means = runner.run(job, streams).reshape(b_s, b_r).mean(axis=1)

    outer = NullDistribution(means, "standard", metric, family)
    return TestResult(
        test_id="confounding_exact",
        statistic=observed,
        p_value=p_value(outer, observed),
        null_summary=fit_gaussian(outer),
        b=b_s,
    )


@dataclass(frozen=True)
class BaselineSets:
    """Joint-matched baseline sample and its split, plus a size-matched development split."""
    baseline: Dataset
    baseline_split: SplitIndexes
    dev_split: SplitIndexes


def baseline_sets(dev: Dataset, target: JointTable, seed: int = 0, test_fraction: float = 0.5) -> BaselineSets:
    baseline = subsample_to_joint(dev, target, seed=derive_seed(seed, BASELINE_TAG))
    if baseline.n == dev.n:
        # Every row kept: the baseline is the development sample and shares its split.
        dev_split = split(dev, test_fraction, "joint", seed=seed)
        return BaselineSets(dev, dev_split, dev_split)

    baseline_split = split(baseline, test_fraction, "joint", seed=derive_seed(seed, BASELINE_TAG, 1))
    try:
        dev_split = split(dev, stratify="joint", seed=seed, test_size=baseline_split.test_size)
    except SplitError as e:
        raise ContractError(f"Cannot size-match the development test set: {e.message}", field="target_joint") from e
    return BaselineSets(baseline, baseline_split, dev_split)


@dataclass(frozen=True)
class BaselineRun:
    sets: BaselineSets
    m_o: float
    null_dev: NullDistribution
    null_baseline: NullDistribution


def baseline_run(
    dev: Dataset,
    target: JointTable,
    learner: LearnerSpec,
    metric: MetricSpec,
    b: int | None,
    seed: int,
    *,
    test_fraction: float = 0.5,
    runner: PermutationRunner | None = None,
) -> BaselineRun:
    """Observed metric plus development and baseline restricted nulls of equal test size."""
    sets = baseline_sets(dev, target, seed, test_fraction)
    b = sets.dev_split.test_size if b is None else b
    if b != sets.dev_split.test_size:
        raise ContractError(
            f"The baseline test needs b equal to the test-set size ({sets.dev_split.test_size}), got {b}", field="b"
        )
    m_o = observed_metric(dev, sets.dev_split, learner, metric)
    null_dev = restricted_null(dev, sets.dev_split, learner, metric, b, seed, runner=runner)
    null_baseline = restricted_null(
        sets.baseline,
        sets.baseline_split,
        learner,
        metric,
        b,
        derive_seed(seed, BASELINE_TAG),
        runner=runner,
        scheme="baseline",
    )
    return BaselineRun(sets, m_o, null_dev, null_baseline)


def evaluate_baseline(run: BaselineRun) -> tuple[CorrectionResult, TestResult]:
    fit_baseline = fit_gaussian(run.null_baseline)
    correction = correct_baseline(run.m_o, fit_gaussian(run.null_dev), fit_baseline)
    test = confounding_vs_baseline_test(run.null_dev, fit_baseline, run.null_dev.b)
    return correction, test


def baseline_workflow(
    dev: Dataset,
    target: JointTable,
    learner: LearnerSpec,
    metric: MetricSpec,
    b: int | None,
    seed: int,
    *,
    runner: PermutationRunner | None = None,
) -> tuple[CorrectionResult, TestResult]:
    return evaluate_baseline(baseline_run(dev, target, learner, metric, b, seed, runner=runner))


class SplitSizes(BaseModel):
    n_train: int
    n_test: int


class AnalysisReport(BaseModel):
    """JSON report written by ``confperm analyze``."""
    model_config = ConfigDict(extra="forbid")

    metric: str
    observed: float
    corrected: CorrectionResult
    response_test: TestResult
    response_p_text: str
    confounding_test: TestResult | None
    confounding_test_exact: TestResult | None = None
    null_summaries: dict[str, dict]
    split: SplitSizes
