import numpy as np
import pytest

from confperm.data import (
    Dataset,
    JointTable,
    TableSchema,
    combine_confounders,
    discretize,
    joint_from_prevalence,
    load_table,
    load_xyc,
    split,
    subsample_to_joint,
    write_table,
)
from confperm.errors import (
    BinningError,
    ContractError,
    FormatError,
    LabelError,
    MissingValueError,
    SchemaError,
    SplitError,
)
from confperm.harness import DEVELOPMENT_JOINT
from confperm.synthdata import ClassGenParams, gen_classification


def same_partition(a, b) -> bool:
    _, codes_a = np.unique(a, return_inverse=True)
    _, codes_b = np.unique(b, return_inverse=True)
    pairs = set(zip(codes_a.tolist(), codes_b.tolist()))
    return len(pairs) == codes_a.max() + 1 == codes_b.max() + 1


SCHEMA = TableSchema(feature_cols=["x1", "x2"], response_col="y", confounder_cols=["c"])


class TestLoadTable:
    def test_four_rows(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1,x2,y,c\n0.1,1,no,A\n0.2,2,yes,A\n0.3,3,no,B\n0.4,4,yes,B\n")
        ds = load_table(path, SCHEMA)
        assert (ds.n, ds.p) == (4, 2)
        assert ds.levels.size <= 4
        assert ds.labels == ("no", "yes")
        np.testing.assert_array_equal(ds.response, [0, 1, 0, 1])
        assert ds.feature_names == ("x1", "x2")

    def test_missing_feature_value(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1,x2,y,c\n0.1,,no,A\n0.2,2,yes,A\n")
        with pytest.raises(MissingValueError):
            load_table(path, SCHEMA)

    def test_three_labels(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1,x2,y,c\n0.1,1,a,A\n0.2,2,b,A\n0.3,3,c,B\n")
        with pytest.raises(LabelError) as info:
            load_table(path, SCHEMA)
        assert info.value.field == "response_col"

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("")
        with pytest.raises(FormatError):
            load_table(path, SCHEMA)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1,x2,c\n0.1,1,A\n0.2,2,B\n")
        with pytest.raises(SchemaError) as info:
            load_table(path, SCHEMA)
        assert info.value.field == "response_col"

    def test_numeric_confounder_needs_bins(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1,x2,y,age\n0.1,1,0,30\n0.2,2,1,35\n0.3,3,0,50\n0.4,4,1,60\n")
        schema = TableSchema(feature_cols=["x1", "x2"], response_col="y", confounder_cols=["age"])
        with pytest.raises(SchemaError):
            load_table(path, schema)

        binned = load_table(path, schema.model_copy(update={"bins": {"age": [40.0]}}))
        assert binned.levels.size == 2
        assert binned.confounder[0] == binned.confounder[1] != binned.confounder[2]

    def test_combines_confounder_columns(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1,y,age,sex\n1,0,young,M\n2,1,young,F\n3,0,senior,M\n4,1,senior,M\n")
        schema = TableSchema(feature_cols=["x1"], response_col="y", confounder_cols=["age", "sex"])
        ds = load_table(path, schema)
        assert list(ds.confounder) == ["young|M", "young|F", "senior|M", "senior|M"]

    def test_write_then_load(self, tmp_path, confounded):
        schema = write_table(confounded, tmp_path / "d.csv")
        loaded = load_table(tmp_path / "d.csv", schema)
        np.testing.assert_array_equal(loaded.response, confounded.response)
        np.testing.assert_array_equal(loaded.confounder, confounded.confounder)
        np.testing.assert_allclose(loaded.features, confounded.features, rtol=1e-11)

    def test_load_xyc_integer_confounder(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y,c\n1.0,2.0,0\n2.0,1.0,1\n3.0,0.5,1\n")
        x, y, c = load_xyc(path, "x", "y", "c")
        np.testing.assert_array_equal(c, ["0", "1", "1"])
        np.testing.assert_allclose(x, [1.0, 2.0, 3.0])

    def test_load_xyc_continuous_confounder(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y,c\n1.0,2.0,0.5\n2.0,1.0,1.5\n3.0,0.5,2.5\n")
        with pytest.raises(SchemaError):
            load_xyc(path, "x", "y", "c")
        _, _, c = load_xyc(path, "x", "y", "c", bins=[1.0])
        assert c[0] != c[1] == c[2]


class TestDataset:
    def test_rejects_non_binary_classification(self):
        with pytest.raises(LabelError):
            Dataset(features=np.zeros((3, 1)), response=[0, 1, 2], confounder=["a"] * 3, task="classification")

    def test_rejects_length_mismatch(self):
        with pytest.raises(ContractError):
            Dataset(features=np.zeros((3, 1)), response=[0, 1], confounder=["a"] * 3, task="regression")

    def test_is_read_only(self, confounded):
        with pytest.raises(ValueError):
            confounded.response[0] = 5.0


class TestCombineConfounders:
    def test_paste(self):
        out = combine_confounders([["A", "A"], ["B", "C"]])
        assert list(out) == ["A|B", "A|C"]

    def test_single_vector_is_identity(self):
        np.testing.assert_array_equal(combine_confounders([["x", "y", "x"]]), ["x", "y", "x"])

    def test_six_levels(self):
        age = ["young", "middle", "senior"] * 4
        sex = ["M", "F"] * 6
        assert np.unique(combine_confounders([age, sex])).size == 6

    def test_separator_in_level_names(self):
        a = combine_confounders([["a|b"], ["c"]])
        b = combine_confounders([["a"], ["b|c"]])
        assert a[0] != b[0]

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            combine_confounders([["a", "b"], ["c"]])

    def test_associative_partition(self):
        rng = np.random.default_rng(0)
        a, b, c = (rng.choice(["p", "q", "r"], 50) for _ in range(3))
        nested = combine_confounders([combine_confounders([a, b]), c])
        flat = combine_confounders([a, b, c])
        assert same_partition(nested, flat)


class TestDiscretize:
    def test_cut_point(self):
        out = discretize([1, 2, 3, 4], [2.5])
        assert out[0] == out[1] != out[2] == out[3]

    def test_quantile_bins(self):
        values = np.random.default_rng(1).random(100)
        _, counts = np.unique(discretize(values, 4), return_counts=True)
        assert counts.size == 4
        assert np.all(np.abs(counts - 25) <= 1)

    def test_constant_vector(self):
        with pytest.raises(BinningError):
            discretize(np.ones(10), 2)

    def test_cut_points_must_increase(self):
        with pytest.raises(BinningError):
            discretize([1, 2, 3], [2.0, 2.0])

    def test_last_quantile_bin_is_closed(self):
        values = np.arange(10.0)
        out = discretize(values, 2)
        assert out[-1] == out[-2]
        assert out[-1].endswith("]")

    def test_combining_with_itself_keeps_partition(self):
        values = np.random.default_rng(2).normal(size=60)
        binned = discretize(values, 3)
        assert same_partition(binned, combine_confounders([binned, binned]))

    def test_close_cut_points_keep_distinct_levels(self):
        out = discretize([0.5, 1.00000015, 1.5], [1.0000001, 1.0000002])
        assert len(set(out)) == 3
        assert out[1] == "[1.0000001,1.0000002)"

    def test_close_quantile_edges_keep_distinct_levels(self):
        values = 1.0 + np.arange(8) * 1e-9
        assert np.unique(discretize(values, 4)).size == 4



class TestSplit:
    def test_joint_stratification(self, balanced):
        idx = split(balanced, 0.3, "joint", seed=4)
        labels = balanced.response_labels()
        for level in ("A", "B"):
            for label in ("0", "1"):
                cell = (balanced.confounder == level) & (labels == label)
                in_test = np.isin(np.flatnonzero(cell), idx.test).sum()
                assert abs(in_test - 0.3 * cell.sum()) <= 1
        assert idx.test_size == 30

    def test_deterministic(self, balanced):
        a = split(balanced, 0.3, "joint", seed=9)
        b = split(balanced, 0.3, "joint", seed=9)
        np.testing.assert_array_equal(a.test, b.test)
        np.testing.assert_array_equal(a.train, b.train)

    def test_disjoint_cover(self, balanced):
        idx = split(balanced, 0.5, "response", seed=0)
        assert np.intersect1d(idx.train, idx.test).size == 0
        assert idx.train.size + idx.test.size == balanced.n

    def test_too_small_test_set(self):
        response = np.zeros(100)
        response[0] = 1.0
        ds = Dataset(features=np.arange(100.0), response=response, confounder=["a"] * 100, task="classification")
        with pytest.raises(SplitError):
            split(ds, 0.01, "joint", seed=0)

    def test_exact_test_size(self, balanced):
        assert split(balanced, stratify="joint", seed=0, test_size=40).test_size == 40

    def test_joint_table_preserved_in_each_set(self, confounded, confounded_split):
        full = JointTable.from_dataset(confounded).counts
        for idx in (confounded_split.train, confounded_split.test):
            part = JointTable.from_dataset(confounded.subset(idx)).counts
            np.testing.assert_array_less(np.abs(part - full * idx.size / confounded.n), 1.0 + 1e-9)


class TestJointTable:
    def test_proportions_must_sum_to_one(self):
        with pytest.raises(ContractError):
            JointTable(("a",), ("0", "1"), [[0.5, 0.4]])

    def test_prevalence_table(self):
        table = joint_from_prevalence(1 / 3, 2.0, 0.5)
        assert table.proportion("M", "1") == pytest.approx(2 / 9, abs=1e-12)
        assert table.proportion("F", "1") == pytest.approx(1 / 9, abs=1e-12)
        assert table.proportion("M", "0") == pytest.approx(5 / 18, abs=1e-12)
        assert table.proportion("F", "0") == pytest.approx(7 / 18, abs=1e-12)

    def test_load_counts(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("confounder,response,count\nM,1,2\nM,0,3\nF,1,1\nF,0,4\n")
        table = JointTable.load(path)
        assert table.levels == ("F", "M")
        assert table.labels == ("0", "1")
        assert table.proportion("M", "1") == pytest.approx(0.2)

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            JointTable.load(tmp_path / "nope.csv")

    def test_frame_roundtrip(self, tmp_path):
        table = joint_from_prevalence(1 / 3, 2.0)
        path = tmp_path / "t.csv"
        table.to_frame().to_csv(path, index=False, float_format="%.17g")
        loaded = JointTable.load(path)
        np.testing.assert_allclose(loaded.proportions, table.proportions, atol=1e-12)


class TestSubsampleToJoint:
    def test_limiting_cell(self):
        ds = Dataset(
            features=np.arange(100.0),
            response=np.r_[np.ones(70), np.zeros(30)],
            confounder=["A"] * 100,
            task="classification",
        )
        target = JointTable(("A",), ("0", "1"), [[0.5, 0.5]])
        out = subsample_to_joint(ds, target, seed=0)
        assert out.n == 60
        assert out.response.sum() == 30

    def test_identity_target(self, balanced):
        out = subsample_to_joint(balanced, JointTable.from_dataset(balanced), seed=5)
        assert out.n == balanced.n
        assert sorted(out.ids) == sorted(balanced.ids)

    def test_prevalence_target(self):
        dev = gen_classification(
            ClassGenParams(n=2000, joint=DEVELOPMENT_JOINT, beta=0.5, theta=0.5, p=2), np.random.default_rng(11)
        )
        target = joint_from_prevalence(1 / 3, 2.0, 0.5)
        out = subsample_to_joint(dev, target, seed=1)
        counts = JointTable.from_dataset(out).counts
        source = JointTable.from_dataset(dev).counts
        assert np.all(np.abs(counts - target.proportions * out.n) <= 1.0 + 1e-9)
        assert np.all(counts <= source)

    def test_empty_source_cell(self):
        ds = Dataset(features=np.arange(4.0), response=[0, 1, 0, 1], confounder=["A"] * 4, task="classification")
        target = JointTable(("A", "B"), ("0", "1"), [[0.25, 0.25], [0.25, 0.25]])
        with pytest.raises(ContractError):
            subsample_to_joint(ds, target)

    def test_deterministic(self, balanced):
        target = JointTable(("A", "B"), ("0", "1"), [[0.4, 0.1], [0.1, 0.4]])
        a = subsample_to_joint(balanced, target, seed=2)
        b = subsample_to_joint(balanced, target, seed=2)
        np.testing.assert_array_equal(a.ids, b.ids)
