from functools import cache

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from scipy import stats

from confperm.engine import PermutationRunner
from confperm.errors import ContractError
from confperm.harness import (
    ExperimentConfig,
    max_atom_mass,
    power_curve,
    run_asymptotics_study,
    run_baseline_scenario,
    run_correlation_study,
    run_experiment,
    run_experiments_study,
    write_study,
)


def written_bytes(result, out_dir):
    return {path.name: path.read_bytes() for path in write_study(result, out_dir)}


@cache
def acceptance_rows(experiment_id):
    cfg = ExperimentConfig(experiment_id=experiment_id, n_datasets=200, n_sweeps=50, seed=11)
    return run_experiment(cfg, PermutationRunner(threads=4))


def rejection_rate(p, alpha=0.05):
    return float(np.mean(np.asarray(p) <= alpha))


class TestHelpers:
    def test_max_atom_mass(self):
        assert max_atom_mass([1.0, 1.0, 2.0, 3.0]) == 0.5
        assert max_atom_mass(np.arange(10.0)) == 0.1

    def test_power_curve(self):
        rows = pd.DataFrame({"response_p": [0.01, 0.2, 0.5, 1.0], "confounding_p": [0.01, 0.01, 0.01, 0.9]})
        curve = power_curve(rows, alpha_grid=(0.05, 0.5, 1.0))
        response = curve[curve.test == "response_p"].rejection_rate.tolist()
        assert response == [0.25, 0.75, 1.0]
        assert curve[curve.test == "confounding_p"].rejection_rate.tolist() == [0.75, 0.75, 1.0]

    def test_power_curve_empty(self):
        with pytest.raises(ContractError):
            power_curve(pd.DataFrame({"response_p": [], "confounding_p": []}))

    def test_experiment_config(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(experiment_id=5)
        with pytest.raises(ValidationError):
            ExperimentConfig(experiment_id=1, n_datasets=5)
        assert ExperimentConfig(experiment_id=1, scale_factor=0.01).effective_datasets == 10
        assert ExperimentConfig(experiment_id=1, scale_factor=0.5).effective_datasets == 100


class TestExperiments:
    cfg = ExperimentConfig(experiment_id=4, n_datasets=10, n_sweeps=10, seed=3)

    def test_rows(self):
        rows = run_experiment(self.cfg)
        assert len(rows) == 10
        assert ((2 * rows.b - rows.n).abs() <= 1).all()
        for col in ("response_p", "confounding_p"):
            assert rows[col].between(0.0, 1.0, inclusive="right").all()
        assert (rows.beta == 0).all() and (rows.theta == 0).all()

    def test_study_tables(self):
        study = run_experiments_study([self.cfg], alpha_grid=(0.05, 0.5))
        assert set(study.tables) == {"experiment_4_rows", "response_power", "confounding_power", "corrected_metrics"}
        assert len(study.tables["response_power"]) == 2
        assert study.summary["experiment_4"]["n_datasets"] == 10


@pytest.mark.slow
class TestTypeOneError:
    @pytest.mark.parametrize("experiment_id", [3, 4])
    def test_response_test_level(self, experiment_id):
        p = acceptance_rows(experiment_id).response_p
        assert 0.02 <= rejection_rate(p) <= 0.09
        assert stats.kstest(p, "uniform").pvalue > 0.01

    @pytest.mark.parametrize("experiment_id", [2, 4])
    def test_confounding_test_level(self, experiment_id):
        assert 0.02 <= rejection_rate(acceptance_rows(experiment_id).confounding_p) <= 0.09


@pytest.mark.slow
class TestPower:
    def test_response_test(self):
        assert rejection_rate(acceptance_rows(1).response_p) >= 0.8

    @pytest.mark.parametrize("experiment_id", [1, 3])
    def test_confounding_test(self, experiment_id):
        assert rejection_rate(acceptance_rows(experiment_id).confounding_p) >= 0.8


@pytest.mark.slow
class TestCorrectedAuc:
    @pytest.mark.parametrize("experiment_id", [3, 4])
    def test_centered_without_response_signal(self, experiment_id):
        assert 0.48 <= acceptance_rows(experiment_id).corrected.mean() <= 0.52

    @pytest.mark.parametrize("experiment_id", [1, 3])
    def test_confounding_lowers_the_metric(self, experiment_id):
        rows = acceptance_rows(experiment_id)
        assert np.mean(rows.corrected < rows.observed) >= 0.95


class TestCorrelationStudy:
    def test_small_study(self):
        study = run_correlation_study(3, seed=2, b=50, n=200)
        table = study.tables["corrected_correlations"]
        assert list(table.columns) == [
            "dataset",
            "observed",
            "partial_correlation",
            "gaussian_corrected",
            "empirical_corrected",
            "pcor_perm",
        ]
        # Binary confounder: the permutation estimator is the sample partial correlation.
        np.testing.assert_allclose(table.pcor_perm, table.partial_correlation, atol=1e-10)
        assert (table.empirical_corrected.abs() <= 1).all()
        assert study.summary["n_datasets"] == 3

    @pytest.mark.slow
    def test_gaussian_correction_tracks_partial_correlation(self):
        summary = run_correlation_study(300, seed=5, b=500, n=1000).summary
        assert summary["rms_gaussian_vs_partial"] < 0.03
        # The empirical correction cannot leave the range of the standard null.
        assert summary["max_abs_empirical"] < summary["max_abs_partial"]


class TestAsymptotics:
    def run(self, runner=None):
        return run_asymptotics_study(test_sizes=(30,), metrics=("auc", "mae"), seed=1, b=50, runner=runner)

    def test_tables(self):
        study = self.run()
        ks = study.tables["null_normality"]
        assert set(ks.metric) == {"auc", "mae"}
        assert ks.ks.between(0.0, 1.0).all()
        assert len(study.tables["asymptotic_nulls"]) == 100

    def test_reruns_are_byte_identical(self, tmp_path):
        first = written_bytes(self.run(), tmp_path / "a")
        second = written_bytes(self.run(PermutationRunner(threads=3)), tmp_path / "b")
        assert first == second
        assert "summary.json" in first

    @pytest.mark.slow
    def test_standard_null_approaches_normal(self):
        tables = [
            run_asymptotics_study(test_sizes=(15, 100), seed=seed, b=1000, null_kind="standard").tables["null_normality"]
            for seed in (0, 1, 2)
        ]
        ks = pd.concat(tables).pivot_table(index="metric", columns="test_size", values="ks", aggfunc=["mean", "max"])
        assert len(ks) == 6
        assert (ks[("mean", 15)] > ks[("mean", 100)]).all()
        assert (ks[("max", 100)] < 0.08).all()


class TestBaselineScenario:
    def test_tables_and_sizes(self):
        study = run_baseline_scenario(0, n=1000)
        assert set(study.tables) == {"joint_tables", "baseline_joint", "baseline_nulls"}
        nulls = study.tables["baseline_nulls"]
        assert nulls.groupby("null").size().tolist() == [study.summary["b"]] * 3
        assert study.summary["baseline_rows"] < 1000
        assert 0 < study.summary["confounding_vs_baseline_p"] <= 1

    def test_matching_development_keeps_every_row(self):
        study = run_baseline_scenario(0, n=400, match_development=True)
        assert study.summary["baseline_rows"] == 400

    @pytest.mark.slow
    def test_matching_development_is_not_flagged(self):
        p_values, z_gaps = [], []
        for seed in range(20):
            study = run_baseline_scenario(seed, n=1000, match_development=True)
            summary = study.summary
            nulls = study.tables["baseline_nulls"]
            s = nulls[nulls.null == "baseline"].value.std(ddof=1)
            p_values.append(summary["confounding_vs_baseline_p"])
            gap = summary["development_null_mean"] - summary["baseline_null_mean"]
            z_gaps.append(gap / (s * np.sqrt(2 / summary["b"])))
        # Both means are estimated from b draws, so the z statistic spreads as N(0, 2).
        assert np.sum((np.asarray(p_values) >= 0.1) & (np.asarray(p_values) <= 0.9)) >= 8
        assert np.max(np.abs(z_gaps)) < 4.5


    @pytest.mark.slow
    def test_null_ordering(self):
        summary = run_baseline_scenario(0, n=10_000).summary
        assert summary["standard_null_mean"] < summary["baseline_null_mean"] < summary["development_null_mean"]
        assert summary["standard_corrected"] < summary["baseline_corrected"] < summary["observed"]
