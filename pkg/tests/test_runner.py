import json

import pandas as pd
import pytest

from confperm.data import joint_from_prevalence
from confperm.runner import run


def events(capsys):
    return [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.strip()]


def generate(tmp_path, *settings):
    out = tmp_path / "gen"
    code = run(["generate", "--out", str(out), "--seed", "1", *sum((["--set", s] for s in settings), [])])
    assert code == 0
    return out / "data.csv"


def analyze_args(data, out, *extra):
    return [
        "analyze",
        "--out",
        str(out),
        "--set",
        f"data={data}",
        "--set",
        "response_col=y",
        "--set",
        "feature_cols=x1,x2,x3",
        "--set",
        "confounder_cols=c",
        *extra,
    ]


@pytest.fixture
def generated(tmp_path, capsys):
    path = generate(tmp_path, "generate.n=300", "generate.p=3")
    capsys.readouterr()
    return path


class TestGenerate:
    def test_writes_table_and_manifest(self, tmp_path, capsys):
        path = generate(tmp_path, "generate.n=50", "generate.p=2")
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["x1", "x2", "y", "c"]
        assert len(frame) == 50
        stream = events(capsys)
        assert stream[-1] == {"type": "done", "success": True}
        assert {"artifact", "result", "metadata"} <= {e["type"] for e in stream}
        manifest = json.loads((tmp_path / "gen" / "manifest.json").read_text())
        assert [a["path"] for a in manifest["artifacts"]] == ["data.csv"]

    def test_design(self, tmp_path):
        out = tmp_path / "design"
        assert run(["generate", "--out", str(out), "--set", "generate.kind=design", "--set", "generate.n=12"]) == 0
        assert len(pd.read_csv(out / "design.csv")) == 12


class TestAnalyze:
    def test_confounded_data(self, tmp_path, capsys, generated):
        out = tmp_path / "analysis"
        assert run(analyze_args(generated, out)) == 0
        result = next(e for e in events(capsys) if e["type"] == "result")["summary"]
        assert result["confounding_p"] < 0.05
        assert result["corrected"] < result["observed"]

        report = json.loads((out / "report.json").read_text())
        assert report["split"] == {"n_train": 150, "n_test": 150}
        assert report["confounding_test"]["b"] == 150
        assert len(pd.read_csv(out / "nulls_restricted.csv")) == 150

    def test_thread_count_does_not_change_outputs(self, tmp_path, generated):
        one, three = tmp_path / "one", tmp_path / "three"
        assert run(analyze_args(generated, one, "--b", "40")) == 0
        assert run(analyze_args(generated, three, "--b", "40", "--threads", "3")) == 0
        for name in ("report.json", "nulls_restricted.csv", "nulls_standard.csv"):
            assert (one / name).read_bytes() == (three / name).read_bytes()

    def test_manifest_independent_of_threads_and_out(self, tmp_path, generated):
        one, three = tmp_path / "one", tmp_path / "three"
        assert run(analyze_args(generated, one, "--b", "40")) == 0
        assert run(analyze_args(generated, three, "--b", "40", "--threads", "3")) == 0
        assert (one / "manifest.json").read_bytes() == (three / "manifest.json").read_bytes()
        config = json.loads((one / "manifest.json").read_text())["config"]
        assert "threads" not in config
        assert "out" not in config


    def test_missing_response_column(self, tmp_path, capsys, generated):
        out = tmp_path / "bad"
        args = analyze_args(generated, out, "--set", "response_col=outcome")
        assert run(args) == 1
        error = next(e for e in events(capsys) if e["type"] == "error")
        assert error["field"] == "response_col"
        assert json.loads((out / "error.json").read_text())["code"] == error["code"]

    def test_unknown_key(self, tmp_path, capsys):
        assert run(["analyze", "--out", str(tmp_path / "x"), "--set", "permutations=10"]) == 1
        stream = events(capsys)
        assert stream[-2]["code"] == "INVALID_CONFIG"
        assert stream[-1] == {"type": "done", "success": False}

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            run(["--version"])
        assert info.value.code == 0
        assert "confperm" in capsys.readouterr().out


class TestOtherCommands:
    def test_baseline(self, tmp_path, capsys, generated):
        target = tmp_path / "target.csv"
        joint_from_prevalence(1 / 3, 2.0).to_frame().to_csv(target, index=False)
        out = tmp_path / "baseline"
        args = analyze_args(generated, out, "--set", f"target_joint={target}")
        args[0] = "baseline"
        assert run(args) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["corrected"]["method"] == "baseline"
        assert report["baseline_rows"] < 300

    def test_partials(self, tmp_path, capsys):
        data = generate(tmp_path, "generate.kind=correlation", "generate.n=200")
        out = tmp_path / "partials"
        args = ["partials", "--out", str(out), "--b", "100"]
        for setting in (f"data={data}", "x_col=x", "y_col=y", "c_col=c"):
            args += ["--set", setting]
        assert run(args) == 0
        table = pd.read_csv(out / "partials.csv")
        assert set(table.estimator) == {"pcov", "pcor", "pdcov", "pdcor"}
        assert "enumeration" not in set(table["mode"])

    def test_simulate_asymptotics(self, tmp_path, capsys):
        out = tmp_path / "sim"
        args = ["simulate", "--out", str(out), "--b", "30", "--set", "study=asymptotics", "--set", "test_sizes=30"]
        assert run(args) == 0
        ks = pd.read_csv(out / "null_normality.csv")
        assert set(ks.metric) == {"mae", "mse", "ccc", "pearson", "auc", "accuracy"}
        summary = json.loads((out / "summary.json").read_text())
        assert summary["study"] == "asymptotics"
