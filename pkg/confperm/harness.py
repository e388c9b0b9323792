"""Simulation studies: type-I error/power experiments, correlation study,
null asymptotics and the population-of-interest baseline scenario.

Every study returns a ``StudyResult`` of named tables; all randomness is
derived from the study seed, so reruns write byte-identical CSVs.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from .data import JointTable, joint_from_prevalence, split
from .engine import PermutationRunner
from .errors import ConfpermError, ContractError, IterationError
from .inference import (
    AnalyticAucNull,
    baseline_run,
    confounding_test,
    correct_auc_analytic,
    correct_empirical,
    correct_gaussian,
    evaluate_baseline,
    response_learning_test,
)
from .learners import LearnerSpec
from .metrics import metric_spec, partial_correlation, pearson
from .nulls import (
    FLOAT_FORMAT,
    association_null,
    fit_gaussian,
    ks_distance,
    observed_metric,
    restricted_null,
    standard_null,
)
from .partials import pcor_perm
from .shuffle import derive_seed
from .synthdata import (
    BernoulliJoint,
    ClassGenParams,
    RegGenParams,
    class_params_from_row,
    draw_correlation_params,
    experiment_design,
    gen_classification,
    gen_correlation_model,
    gen_regression,
)

logger = logging.getLogger(__name__)

MIN_DATASETS = 10
DEFAULT_ALPHA_GRID = tuple(np.round(np.linspace(0.0, 1.0, 101), 2))
ASYMPTOTIC_METRICS = ("mae", "mse", "ccc", "pearson", "auc", "accuracy")

# Seed-family tags for the studies.
_EXPERIMENT_TAG = 10
_CORRELATION_TAG = 20
_ASYMPTOTICS_TAG = 30
_BASELINE_TAG = 40


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    experiment_id: int = Field(ge=1, le=4)
    n_datasets: int = Field(200, ge=MIN_DATASETS)
    learner: LearnerSpec = LearnerSpec()
    metric: str = "auc"
    seed: int = 0
    scale_factor: float = Field(1.0, gt=0.0, le=1.0)
    n_sweeps: int = Field(200, ge=0)
    test_fraction: float = Field(0.5, gt=0.0, lt=1.0)

    @property
    def effective_datasets(self) -> int:
        """Scaled dataset count; b is always the test size, so it is not scaled."""
        return max(MIN_DATASETS, int(round(self.n_datasets * self.scale_factor)))


class ExperimentRow(BaseModel):
    dataset: int
    n: int
    p11: float
    p10: float
    p01: float
    p00: float
    beta: float
    theta: float
    rho: float
    b: int
    observed: float
    corrected: float
    response_p: float = Field(gt=0.0, le=1.0)
    confounding_p: float = Field(gt=0.0, le=1.0)


@dataclass
class StudyResult:
    name: str
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def max_atom_mass(samples: Sequence[float]) -> float:
    """Largest share of null samples sitting on one value."""
    _, counts = np.unique(np.asarray(samples, dtype=float), return_counts=True)
    return float(counts.max() / counts.sum())


def _experiment_row(cfg: ExperimentConfig, k: int, params: pd.Series, runner: PermutationRunner) -> ExperimentRow:
    seed = derive_seed(cfg.seed, _EXPERIMENT_TAG, cfg.experiment_id, k)
    ds = gen_classification(class_params_from_row(params), np.random.default_rng(seed))
    split_idx = split(ds, cfg.test_fraction, "joint", seed=seed)
    b = split_idx.test_size
    metric = metric_spec(cfg.metric)

    m_o = observed_metric(ds, split_idx, cfg.learner, metric)
    null_r = restricted_null(ds, split_idx, cfg.learner, metric, b, seed, runner=runner)
    fit_r = fit_gaussian(null_r)
    if metric.id == "auc":
        n_p = int(ds.response[split_idx.test].sum())
        reference = AnalyticAucNull(n_n=b - n_p, n_p=n_p)
        corrected = correct_auc_analytic(m_o, fit_r, reference.n_n, reference.n_p)
    else:
        null_s = standard_null(ds, split_idx, cfg.learner, metric, b, derive_seed(seed, 1), runner=runner)
        reference = fit_gaussian(null_s)
        corrected = correct_gaussian(m_o, fit_r, reference)

    return ExperimentRow(
        dataset=k,
        n=int(params["n"]),
        p11=params["p11"],
        p10=params["p10"],
        p01=params["p01"],
        p00=params["p00"],
        beta=params["beta"],
        theta=params["theta"],
        rho=params["rho"],
        b=b,
        observed=m_o,
        corrected=corrected.m_c,
        response_p=response_learning_test(null_r, m_o).p_value,
        confounding_p=confounding_test(null_r, reference, b).p_value,
    )


def run_experiment(cfg: ExperimentConfig, runner: PermutationRunner | None = None) -> pd.DataFrame:
    """One row per simulated dataset; b equals the test-set size in every row."""
    runner = runner or PermutationRunner()
    n_datasets = cfg.effective_datasets
    design_rng = np.random.default_rng(derive_seed(cfg.seed, _EXPERIMENT_TAG, cfg.experiment_id))
    design = experiment_design(cfg.experiment_id, n_datasets, design_rng, cfg.n_sweeps)

    rows = []
    for k, params in design.iterrows():
        try:
            rows.append(_experiment_row(cfg, int(k), params, runner))
        except ConfpermError as e:
            raise IterationError(f"Experiment {cfg.experiment_id}, dataset {k}: {e.message}", index=int(k)) from e
        if (k + 1) % 10 == 0:
            logger.info("Experiment %d: %d/%d datasets", cfg.experiment_id, k + 1, n_datasets)
    return pd.DataFrame([r.model_dump() for r in rows])


def power_curve(
    rows: pd.DataFrame,
    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    tests: Sequence[str] = ("response_p", "confounding_p"),
) -> pd.DataFrame:
    """Rejection rate at each nominal level: mean(p <= alpha)."""
    if rows.empty:
        raise ContractError("power_curve needs at least one row")
    alphas = np.asarray(alpha_grid, dtype=float)
    records = []
    for test in tests:
        p = rows[test].to_numpy(dtype=float)
        for alpha in alphas:
            records.append({"test": test, "alpha": float(alpha), "rejection_rate": float(np.mean(p <= alpha))})
    return pd.DataFrame(records, columns=["test", "alpha", "rejection_rate"])


def run_experiments_study(
    configs: Sequence[ExperimentConfig],
    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    runner: PermutationRunner | None = None,
) -> StudyResult:
    """Experiments plus response-test and confounding-test power curves."""
    result = StudyResult("experiments")
    curves_a, curves_b, auc_rows = [], [], []
    for cfg in configs:
        rows = run_experiment(cfg, runner)
        result.tables[f"experiment_{cfg.experiment_id}_rows"] = rows
        curves = power_curve(rows, alpha_grid).assign(experiment=cfg.experiment_id)
        curves_a.append(curves[curves.test == "response_p"])
        curves_b.append(curves[curves.test == "confounding_p"])
        auc_rows.append(rows[["dataset", "observed", "corrected"]].assign(experiment=cfg.experiment_id))
        result.summary[f"experiment_{cfg.experiment_id}"] = {
            "n_datasets": len(rows),
            "response_rejection_05": float(np.mean(rows.response_p <= 0.05)),
            "confounding_rejection_05": float(np.mean(rows.confounding_p <= 0.05)),
            "mean_corrected": float(rows.corrected.mean()),
            "share_corrected_below_observed": float(np.mean(rows.corrected < rows.observed)),
        }
    result.tables["response_power"] = pd.concat(curves_a, ignore_index=True)
    result.tables["confounding_power"] = pd.concat(curves_b, ignore_index=True)
    result.tables["corrected_metrics"] = pd.concat(auc_rows, ignore_index=True)
    return result


def run_correlation_study(
    n_datasets: int,
    seed: int,
    *,
    b: int = 500,
    n: int = 1000,
    runner: PermutationRunner | None = None,
) -> StudyResult:
    """Corrected correlations against sample partial correlations."""
    runner = runner or PermutationRunner()
    rng = np.random.default_rng(derive_seed(seed, _CORRELATION_TAG))
    records = []
    for k in range(n_datasets):
        params = draw_correlation_params(rng, n=n)
        data_seed = derive_seed(seed, _CORRELATION_TAG, k)
        x, y, c = gen_correlation_model(params, np.random.default_rng(data_seed))
        observed = pearson(x, y)
        null_r = association_null(x, y, c, pearson, b, data_seed, "restricted", runner=runner)
        null_s = association_null(x, y, c, pearson, b, derive_seed(data_seed, 1), "standard", runner=runner)
        records.append(
            {
                "dataset": k,
                "observed": observed,
                "partial_correlation": partial_correlation(x, y, c),
                "gaussian_corrected": correct_gaussian(observed, fit_gaussian(null_r), fit_gaussian(null_s)).m_c,
                "empirical_corrected": correct_empirical(observed, null_r, null_s).m_c,
                "pcor_perm": pcor_perm(x, y, c).value,
            }
        )
    table = pd.DataFrame(records)

    def rms(col: str) -> float:
        return float(np.sqrt(np.mean((table[col] - table["partial_correlation"]) ** 2)))

    return StudyResult(
        "correlation",
        tables={"corrected_correlations": table},
        summary={
            "n_datasets": n_datasets,
            "b": b,
            "rms_gaussian_vs_partial": rms("gaussian_corrected"),
            "rms_empirical_vs_partial": rms("empirical_corrected"),
            "rms_pcor_perm_vs_partial": rms("pcor_perm"),
            "max_abs_empirical": float(table["empirical_corrected"].abs().max()),
            "max_abs_partial": float(table["partial_correlation"].abs().max()),
        },
    )


def _asymptotic_dataset(metric_id: str, test_size: int, seed: int):
    rng = np.random.default_rng(seed)
    if metric_id in ("auc", "accuracy"):
        params = ClassGenParams(n=2 * test_size, joint=BernoulliJoint.symmetric(0.6), beta=0.5, theta=0.5, rho=0.5)
        return gen_classification(params, rng), LearnerSpec(kind="logistic")
    params = RegGenParams(n=2 * test_size, effect_cy=1.0, beta=0.5, theta=0.5, rho=0.5, error="exponential")
    return gen_regression(params, rng), LearnerSpec(kind="ols")


def run_asymptotics_study(
    test_sizes: Sequence[int] = (15, 30, 100),
    metrics: Sequence[str] = ASYMPTOTIC_METRICS,
    seed: int = 0,
    *,
    b: int = 1000,
    null_kind: Literal["restricted", "standard"] = "restricted",
    runner: PermutationRunner | None = None,
) -> StudyResult:
    """KS distance between each permutation null and its fitted normal, by test size."""
    runner = runner or PermutationRunner()
    ks_rows, null_rows = [], []
    for metric_id in metrics:
        metric = metric_spec(metric_id)
        for test_size in test_sizes:
            data_seed = derive_seed(seed, _ASYMPTOTICS_TAG, test_size)
            ds, learner = _asymptotic_dataset(metric_id, test_size, data_seed)
            split_idx = split(ds, stratify="joint", seed=data_seed, test_size=test_size)
            build = standard_null if null_kind == "standard" else restricted_null
            null = build(ds, split_idx, learner, metric, b, data_seed, runner=runner)
            ks_rows.append(
                {
                    "metric": metric_id,
                    "test_size": test_size,
                    "ks": ks_distance(null),
                    "max_atom_mass": max_atom_mass(null.samples),
                    "mean": float(null.samples.mean()),
                    "sd": float(null.samples.std(ddof=1)),
                }
            )
            null_rows.append(pd.DataFrame({"metric": metric_id, "test_size": test_size, "value": null.samples}))
    ks = pd.DataFrame(ks_rows)
    return StudyResult(
        "asymptotics",
        tables={"null_normality": ks, "asymptotic_nulls": pd.concat(null_rows, ignore_index=True)},
        summary={"b": b, "null": null_kind, "max_ks_largest_test": float(ks[ks.test_size == max(test_sizes)].ks.max())},
    )


# Development sample: men are over-represented among cases.
DEVELOPMENT_JOINT = BernoulliJoint(p11=0.35, p10=0.05, p01=0.15, p00=0.45)


def run_baseline_scenario(
    seed: int,
    *,
    n: int = 10_000,
    b: int | None = None,
    match_development: bool = False,
    learner: LearnerSpec | None = None,
    runner: PermutationRunner | None = None,
) -> StudyResult:
    """Biased development sample vs a population of interest with prevalence 1/3, risk ratio 2."""
    learner = learner or LearnerSpec()
    metric = metric_spec("auc")
    data_seed = derive_seed(seed, _BASELINE_TAG)
    params = ClassGenParams(n=n, joint=DEVELOPMENT_JOINT, beta=0.5, theta=0.5, rho=0.5)
    dev = gen_classification(params, np.random.default_rng(data_seed))
    target = JointTable.from_dataset(dev) if match_development else joint_from_prevalence(1 / 3, 2.0, 0.5)

    run = baseline_run(dev, target, learner, metric, b, seed, runner=runner)
    null_s = standard_null(dev, run.sets.dev_split, learner, metric, run.null_dev.b, derive_seed(seed, 3), runner=runner)
    fit_dev = fit_gaussian(run.null_dev)
    standard_corrected = correct_gaussian(run.m_o, fit_dev, fit_gaussian(null_s))
    baseline_corrected, test = evaluate_baseline(run)

    nulls = pd.concat(
        [
            pd.DataFrame({"null": name, "value": null.samples})
            for name, null in (("development", run.null_dev), ("baseline", run.null_baseline), ("standard", null_s))
        ],
        ignore_index=True,
    )
    return StudyResult(
        "baseline",
        tables={
            "joint_tables": pd.concat(
                [
                    target.to_frame().assign(sample="target"),
                    JointTable.from_dataset(dev).to_frame().assign(sample="development"),
                ],
                ignore_index=True,
            ),
            "baseline_joint": JointTable.from_dataset(run.sets.baseline).to_frame(),
            "baseline_nulls": nulls,
        },
        summary={
            "observed": run.m_o,
            "b": run.null_dev.b,
            "development_null_mean": fit_dev.a,
            "baseline_null_mean": float(run.null_baseline.samples.mean()),
            "standard_null_mean": float(null_s.samples.mean()),
            "standard_corrected": standard_corrected.m_c,
            "baseline_corrected": baseline_corrected.m_c,
            "confounding_vs_baseline_p": test.p_value,
            "baseline_rows": run.sets.baseline.n,
        },
    )


def write_study(result: StudyResult, out_dir: str | Path) -> list[Path]:
    """One CSV per table plus ``summary.json``; fixed float format."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in sorted(result.tables):
        path = out / f"{name}.csv"
        result.tables[name].to_csv(path, index=False, float_format=FLOAT_FORMAT)
        paths.append(path)
    summary = out / "summary.json"
    summary.write_text(json.dumps({"study": result.name, **result.summary}, indent=2, sort_keys=True) + "\n")
    paths.append(summary)
    return paths
