"""Command orchestration; every command is a generator of progress events."""

import hashlib
import json
import logging
import platform
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Iterator

import numpy as np
import pandas as pd

from .config import RunConfig
from .data import Dataset, JointTable, load_table, load_xyc, split, write_table
from .engine import PermutationRunner
from .errors import ConfigError
from .harness import (
    DEFAULT_ALPHA_GRID,
    ExperimentConfig,
    StudyResult,
    run_asymptotics_study,
    run_baseline_scenario,
    run_correlation_study,
    run_experiments_study,
    write_study,
)
from .inference import (
    AnalysisReport,
    AnalyticAucNull,
    SplitSizes,
    baseline_run,
    confounding_test,
    confounding_test_exact,
    correct_auc_analytic,
    correct_empirical,
    correct_gaussian,
    evaluate_baseline,
    response_learning_test,
)
from .metrics import CLASSIFICATION_METRICS, metric_spec
from .nulls import FLOAT_FORMAT, describe_p_value, fit_gaussian, observed_metric, restricted_null, standard_null
from .partials import partials_table
from .shuffle import derive_seed
from .synthdata import (
    BernoulliJoint,
    ClassGenParams,
    CorrGenParams,
    RegGenParams,
    experiment_design,
    gen_classification,
    gen_correlation_model,
    gen_regression,
)

logger = logging.getLogger(__name__)

FULL_SCALE_DATASETS = 1000
VERSIONED_PACKAGES = ("confperm", "numpy", "scipy", "pandas", "dcor", "pydantic")
# Settings that change where or how fast a run happens, never what it computes.
RUN_ONLY_KEYS = {"threads", "out"}


@dataclass
class ArtifactEvent:
    """A file written by the command."""
    path: Path
    kind: str


@dataclass
class ResultEvent:
    """Command summary, emitted once at the end of a command."""
    command: str
    summary: dict[str, Any] = field(default_factory=dict)


def sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def package_versions() -> dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


class AnalysisManager:
    """Runs one command against a resolved ``RunConfig``."""

    def __init__(self, config: RunConfig):
        self._config = config
        self._runner = PermutationRunner(config.threads)
        self._artifacts: list[ArtifactEvent] = []

    @property
    def out_dir(self) -> Path:
        return Path(self._config.out)

    def _artifact(self, path: Path, kind: str) -> ArtifactEvent:
        event = ArtifactEvent(path=path, kind=kind)
        self._artifacts.append(event)
        return event

    def _write_json(self, name: str, payload: str, kind: str) -> ArtifactEvent:
        path = self.out_dir / name
        path.write_text(payload if payload.endswith("\n") else payload + "\n")
        return self._artifact(path, kind)

    def _write_manifest(self, command: str) -> ArtifactEvent:
        manifest = {
            "command": command,
            "seed": self._config.seed,
            "config": self._config.model_dump(mode="json", exclude=RUN_ONLY_KEYS),
            "versions": package_versions(),
            "artifacts": [
                {"path": a.path.name, "kind": a.kind, "sha256": sha256(a.path)}
                for a in sorted(self._artifacts, key=lambda a: a.path.name)
            ],
        }
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return ArtifactEvent(path=path, kind="manifest")

    def _prepare(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._artifacts.clear()

    def _load(self) -> Dataset:
        ds = load_table(self._config.data, self._config.table_schema())
        metric = metric_spec(self._config.metric)
        if metric.id in CLASSIFICATION_METRICS and ds.task != "classification":
            raise ConfigError(f"Metric {metric.id} needs task = classification", field="metric")
        return ds

    def run(self, command: str) -> Iterator[Any]:
        handlers = {
            "analyze": self.analyze,
            "simulate": self.simulate,
            "partials": self.partials,
            "baseline": self.baseline,
            "generate": self.generate,
        }
        if command not in handlers:
            raise ConfigError(f"Unknown command {command!r}", field="command")
        self._prepare()
        yield from handlers[command]()
        yield self._write_manifest(command)

    def analyze(self) -> Iterator[Any]:
        cfg = self._config
        yield f"Loading {cfg.data}..."
        ds = self._load()
        metric = metric_spec(cfg.metric)
        split_idx = split(ds, cfg.test_fraction, cfg.stratify, seed=cfg.seed)
        b = cfg.b or split_idx.test_size
        yield f"Loaded {ds.n} rows, {ds.p} features, {ds.levels.size} confounder levels; test size {split_idx.test_size}"

        m_o = observed_metric(ds, split_idx, cfg.learner, metric)
        yield f"Observed {metric.id}: {m_o:.4f}"

        yield f"Building restricted null (b={b})..."
        null_r = restricted_null(ds, split_idx, cfg.learner, metric, b, cfg.seed, runner=self._runner)
        yield f"Building standard null (b={b})..."
        null_s = standard_null(ds, split_idx, cfg.learner, metric, b, derive_seed(cfg.seed, 1), runner=self._runner)
        fit_r, fit_s = fit_gaussian(null_r), fit_gaussian(null_s)

        test_labels = ds.response[split_idx.test]
        analytic = None
        if metric.id == "auc":
            n_p = int(test_labels.sum())
            analytic = AnalyticAucNull(n_n=test_labels.size - n_p, n_p=n_p)

        if cfg.correction == "empirical":
            corrected = correct_empirical(m_o, null_r, null_s)
        elif cfg.correction == "analytic_auc":
            if analytic is None:
                raise ConfigError("correction = analytic_auc needs metric = auc", field="correction")
            corrected = correct_auc_analytic(m_o, fit_r, analytic.n_n, analytic.n_p)
        else:
            corrected = correct_gaussian(m_o, fit_r, fit_s)

        response = response_learning_test(null_r, m_o)

        confounding = None
        if b == split_idx.test_size:
            if cfg.reference == "analytic_auc":
                if analytic is None:
                    raise ConfigError("reference = analytic_auc needs metric = auc", field="reference")
                confounding = confounding_test(null_r, analytic, b)
            else:
                confounding = confounding_test(null_r, fit_s, b)
        else:
            yield f"Skipping confounding test: b={b} differs from the test size {split_idx.test_size}"

        exact = None
        if cfg.b_s:
            yield f"Running exact confounding test ({cfg.b_s} x {split_idx.test_size} cycles)..."
            exact = confounding_test_exact(
                ds,
                split_idx,
                cfg.learner,
                metric,
                cfg.b_s,
                cfg.seed,
                null_r=null_r if b == split_idx.test_size else None,
                runner=self._runner,
            )

        report = AnalysisReport(
            metric=metric.id,
            observed=m_o,
            corrected=corrected,
            response_test=response,
            response_p_text=describe_p_value(response.p_value, null_r.b),
            confounding_test=confounding,
            confounding_test_exact=exact,
            null_summaries={"restricted": null_r.summary(), "standard": null_s.summary()},
            split=SplitSizes(n_train=int(split_idx.train.size), n_test=split_idx.test_size),
        )
        yield self._write_json("report.json", report.model_dump_json(indent=2), "report")
        yield self._artifact(null_r.to_csv(self.out_dir / "nulls_restricted.csv"), "null")
        yield self._artifact(null_s.to_csv(self.out_dir / "nulls_standard.csv"), "null")

        yield ResultEvent(
            command="analyze",
            summary={
                "observed": m_o,
                "corrected": corrected.m_c,
                "method": corrected.method,
                "response_p": response.p_value,
                "confounding_p": None if confounding is None else confounding.p_value,
            },
        )

    def baseline(self) -> Iterator[Any]:
        cfg = self._config
        if not cfg.target_joint:
            raise ConfigError("baseline needs target_joint", field="target_joint")
        yield f"Loading {cfg.data} and target joint {cfg.target_joint}..."
        dev = self._load()
        target = JointTable.load(cfg.target_joint, sep=cfg.sep)
        metric = metric_spec(cfg.metric)

        yield "Building development and baseline restricted nulls..."
        run = baseline_run(
            dev, target, cfg.learner, metric, cfg.b, cfg.seed, test_fraction=cfg.test_fraction, runner=self._runner
        )
        corrected, test = evaluate_baseline(run)
        report = {
            "metric": metric.id,
            "observed": run.m_o,
            "corrected": corrected.model_dump(mode="json"),
            "confounding_vs_baseline_test": test.model_dump(mode="json"),
            "null_summaries": {"development": run.null_dev.summary(), "baseline": run.null_baseline.summary()},
            "baseline_rows": run.sets.baseline.n,
            "split": {"n_train": int(run.sets.dev_split.train.size), "n_test": run.sets.dev_split.test_size},
        }
        yield self._write_json("report.json", json.dumps(report, indent=2), "report")
        yield self._artifact(run.null_dev.to_csv(self.out_dir / "nulls_development.csv"), "null")
        yield self._artifact(run.null_baseline.to_csv(self.out_dir / "nulls_baseline.csv"), "null")
        yield ResultEvent(
            command="baseline",
            summary={"observed": run.m_o, "corrected": corrected.m_c, "confounding_p": test.p_value},
        )

    def partials(self) -> Iterator[Any]:
        cfg = self._config
        missing = [k for k in ("data", "x_col", "y_col", "c_col") if not getattr(cfg, k)]
        if missing:
            raise ConfigError(f"partials needs {', '.join(missing)}", field=missing[0])
        x, y, c = load_xyc(cfg.data, cfg.x_col, cfg.y_col, cfg.c_col, sep=cfg.sep, bins=cfg.bins.get(cfg.c_col))
        modes = ("closed_form", "enumeration", "monte_carlo") if cfg.mode == "all" else (cfg.mode,)
        yield f"Estimating partial association of {cfg.x_col} and {cfg.y_col} given {cfg.c_col} (n={x.size})..."
        table = partials_table(
            x,
            y,
            c,
            modes,
            b=cfg.b or 1000,
            seed=cfg.seed,
            runner=self._runner,
        )
        path = self.out_dir / "partials.csv"
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        yield self._artifact(path, "table")
        yield ResultEvent(command="partials", summary={"rows": len(table), "max_abs_gap": float(table.abs_gap.max())})

    def _study(self) -> StudyResult:
        cfg = self._config
        if cfg.study == "experiments":
            n_datasets = FULL_SCALE_DATASETS if cfg.full_scale else cfg.n_datasets
            configs = [
                ExperimentConfig(
                    experiment_id=k,
                    n_datasets=n_datasets,
                    learner=cfg.learner,
                    metric=cfg.metric,
                    seed=cfg.seed,
                    scale_factor=cfg.scale_factor,
                    n_sweeps=cfg.n_sweeps,
                    test_fraction=cfg.test_fraction,
                )
                for k in cfg.experiments
            ]
            return run_experiments_study(configs, cfg.alpha_grid or DEFAULT_ALPHA_GRID, runner=self._runner)
        if cfg.study == "correlation":
            n_datasets = FULL_SCALE_DATASETS if cfg.full_scale else cfg.n_datasets
            return run_correlation_study(n_datasets, cfg.seed, b=cfg.b or 500, runner=self._runner)
        if cfg.study == "asymptotics":
            return run_asymptotics_study(cfg.test_sizes, seed=cfg.seed, b=cfg.b or 1000, runner=self._runner)
        return run_baseline_scenario(
            cfg.seed,
            n=cfg.scenario_n,
            b=cfg.b,
            match_development=cfg.match_development,
            learner=cfg.learner,
            runner=self._runner,
        )

    def simulate(self) -> Iterator[Any]:
        yield f"Running {self._config.study} study (seed {self._config.seed})..."
        result = self._study()
        for path in write_study(result, self.out_dir):
            yield self._artifact(path, "table" if path.suffix == ".csv" else "summary")
        yield ResultEvent(command="simulate", summary={"study": result.name, **result.summary})

    def generate(self) -> Iterator[Any]:
        cfg = self._config
        gen_cfg = cfg.generate
        rng = np.random.default_rng(cfg.seed)
        yield f"Generating {gen_cfg.kind} data (n={gen_cfg.n})..."

        if gen_cfg.kind == "classification":
            params = ClassGenParams(
                n=gen_cfg.n,
                joint=BernoulliJoint.symmetric(gen_cfg.correlation),
                beta=gen_cfg.beta,
                theta=gen_cfg.theta,
                rho=gen_cfg.rho,
                p=gen_cfg.p,
            )
            path = self.out_dir / "data.csv"
            write_table(gen_classification(params, rng), path, sep=cfg.sep)
        elif gen_cfg.kind == "regression":
            params = RegGenParams(
                n=gen_cfg.n,
                c_prob=gen_cfg.c_prob,
                effect_cy=gen_cfg.effect_cy,
                beta=gen_cfg.beta,
                theta=gen_cfg.theta,
                rho=gen_cfg.rho,
                p=gen_cfg.p,
                error=gen_cfg.error,
            )
            path = self.out_dir / "data.csv"
            write_table(gen_regression(params, rng), path, sep=cfg.sep)
        elif gen_cfg.kind == "correlation":
            params = CorrGenParams(
                p=gen_cfg.bernoulli_p,
                beta_xc=gen_cfg.beta_xc,
                beta_yc=gen_cfg.beta_yc,
                beta_xy=gen_cfg.beta_xy,
                n=gen_cfg.n,
            )
            x, y, c = gen_correlation_model(params, rng)
            path = self.out_dir / "data.csv"
            pd.DataFrame({"x": x, "y": y, "c": c}).to_csv(path, index=False, sep=cfg.sep, float_format=FLOAT_FORMAT)
        else:
            design = experiment_design(gen_cfg.experiment, gen_cfg.n, rng, cfg.n_sweeps)
            path = self.out_dir / "design.csv"
            design.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        yield self._artifact(path, "table")
        yield ResultEvent(command="generate", summary={"kind": gen_cfg.kind, "n": gen_cfg.n})
