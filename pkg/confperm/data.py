"""Tabular ingestion, confounder encoding and train/test splitting."""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from .errors import (
    BinningError,
    ContractError,
    FormatError,
    LabelError,
    MissingValueError,
    SchemaError,
    SplitError,
)

logger = logging.getLogger(__name__)

Task = Literal["classification", "regression"]
Stratify = Literal["none", "response", "joint"]

LEVEL_SEPARATOR = "|"
PROPORTION_TOLERANCE = 1e-12


def _readonly(values: np.ndarray) -> np.ndarray:
    values = np.array(values, copy=True)
    values.flags.writeable = False
    return values


@dataclass(frozen=True)
class Dataset:
    """Features, response and a categorical confounder for one task.

    Classification responses are stored as 0/1 floats; ``labels`` keeps the
    original (negative, positive) label strings.
    """
    features: np.ndarray
    response: np.ndarray
    confounder: np.ndarray
    task: Task
    ids: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()
    labels: tuple[str, str] | None = None

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise SchemaError(f"Unknown task: {self.task}", field="task")

        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features[:, None]
        if features.ndim != 2:
            raise FormatError("Features must be a 2-D matrix")
        n, p = features.shape
        response = np.asarray(self.response, dtype=float).ravel()
        confounder = np.asarray(self.confounder).astype(str).ravel()

        if n < 2 or p < 1:
            raise FormatError(f"Need at least 2 rows and 1 feature, got {n}x{p}")
        if response.shape[0] != n or confounder.shape[0] != n:
            raise ContractError(
                f"Column lengths differ: features {n}, response {response.shape[0]}, "
                f"confounder {confounder.shape[0]}"
            )
        if not np.all(np.isfinite(features)):
            raise MissingValueError("Features contain missing or non-finite values", field="feature_cols")
        if not np.all(np.isfinite(response)):
            raise MissingValueError("Response contains missing or non-finite values", field="response_col")

        labels = self.labels
        if self.task == "classification":
            if not np.all(np.isin(response, (0.0, 1.0))):
                raise LabelError("Classification response must be coded 0/1", field="response_col")
            labels = tuple(labels) if labels is not None else ("0", "1")
            if len(labels) != 2 or labels[0] == labels[1]:
                raise LabelError(f"Need two distinct labels, got {labels}", field="response_col")
        else:
            labels = None

        ids = self.ids
        if ids is not None:
            ids = np.asarray(ids).astype(str).ravel()
            if ids.shape[0] != n:
                raise ContractError("ids length differs from row count", field="id_col")
            ids = _readonly(ids)

        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise ContractError(f"{len(names)} feature names for {p} features")

        object.__setattr__(self, "features", _readonly(features))
        object.__setattr__(self, "response", _readonly(response))
        object.__setattr__(self, "confounder", _readonly(confounder))
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def levels(self) -> np.ndarray:
        return np.unique(self.confounder)

    def subset(self, indexes: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(indexes, dtype=int)
        return replace(
            self,
            features=self.features[idx],
            response=self.response[idx],
            confounder=self.confounder[idx],
            ids=None if self.ids is None else self.ids[idx],
        )

    def with_confounder(self, confounder: Sequence[str] | np.ndarray) -> "Dataset":
        return replace(self, confounder=np.asarray(confounder))

    def response_labels(self) -> np.ndarray:
        """Response as label strings (classification) or formatted reals."""
        if self.labels is None:
            return self.response.astype(str)
        return np.asarray(self.labels)[self.response.astype(int)]


@dataclass(frozen=True)
class SplitIndexes:
    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        train = np.sort(np.asarray(self.train, dtype=int))
        test = np.sort(np.asarray(self.test, dtype=int))
        if train.size == 0 or test.size == 0:
            raise SplitError("Train and test sets must both be non-empty")
        if np.intersect1d(train, test).size:
            raise SplitError("Train and test sets overlap")
        if min(train[0], test[0]) < 0:
            raise SplitError("Negative row index in split")
        object.__setattr__(self, "train", _readonly(train))
        object.__setattr__(self, "test", _readonly(test))

    @property
    def test_size(self) -> int:
        return int(self.test.size)

    def apply(self, ds: Dataset) -> tuple[Dataset, Dataset]:
        if max(self.train[-1], self.test[-1]) >= ds.n:
            raise SplitError(f"Split indexes exceed dataset size {ds.n}")
        return ds.subset(self.train), ds.subset(self.test)


@dataclass(frozen=True)
class JointTable:
    """Proportions over (confounder level x response label) cells."""
    levels: tuple[str, ...]
    labels: tuple[str, ...]
    proportions: np.ndarray
    counts: np.ndarray | None = None

    def __post_init__(self):
        props = np.asarray(self.proportions, dtype=float)
        if props.shape != (len(self.levels), len(self.labels)):
            raise ContractError(
                f"Joint table shape {props.shape} does not match "
                f"{len(self.levels)} levels x {len(self.labels)} labels"
            )
        if np.any(props < 0) or not np.all(np.isfinite(props)):
            raise ContractError("Joint table cells must be finite and non-negative")
        if abs(props.sum() - 1.0) > PROPORTION_TOLERANCE:
            raise ContractError(f"Joint table proportions sum to {props.sum():.15g}, not 1")
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        object.__setattr__(self, "labels", tuple(str(v) for v in self.labels))
        object.__setattr__(self, "proportions", _readonly(props))
        if self.counts is not None:
            object.__setattr__(self, "counts", _readonly(np.asarray(self.counts, dtype=int)))

    @classmethod
    def from_counts(cls, levels, labels, counts) -> "JointTable":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise ContractError("Joint table has no observations")
        return cls(tuple(levels), tuple(labels), counts / total, counts.astype(int))

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "JointTable":
        if ds.task != "classification":
            raise ContractError("Joint tables need a classification response")
        levels = tuple(ds.levels)
        counts = np.zeros((len(levels), 2), dtype=int)
        codes = np.searchsorted(np.asarray(levels), ds.confounder)
        np.add.at(counts, (codes, ds.response.astype(int)), 1)
        return cls.from_counts(levels, ds.labels, counts)

    @classmethod
    def load(cls, path: str | Path, sep: str = ",") -> "JointTable":
        """Read a ``confounder,response,proportion`` (or ``count``) delimited file."""
        try:
            frame = pd.read_csv(path, sep=sep, dtype={"confounder": str, "response": str})
        except FileNotFoundError as e:
            raise FormatError(f"Target joint table not found: {path}", field="target_joint") from e
        except pd.errors.EmptyDataError as e:
            raise FormatError(f"Target joint table is empty: {path}", field="target_joint") from e
        value_col = "count" if "count" in frame.columns else "proportion"
        missing = {"confounder", "response", value_col} - set(frame.columns)
        if missing:
            raise SchemaError(f"Joint table missing column(s) {sorted(missing)}", field="target_joint")
        table = frame.pivot_table(
            index="confounder", columns="response", values=value_col, aggfunc="sum", fill_value=0
        ).sort_index()
        values = table.to_numpy(dtype=float)
        if value_col == "count":
            return cls.from_counts(table.index, table.columns, values)
        total = values.sum()
        if abs(total - 1.0) > 1e-6:
            raise ContractError(f"Target proportions sum to {total:.6g}", field="target_joint")
        return cls(tuple(table.index), tuple(table.columns), values / total)

    def proportion(self, level: str, label: str) -> float:
        return float(self.proportions[self.levels.index(level), self.labels.index(label)])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for i, level in enumerate(self.levels):
            for j, label in enumerate(self.labels):
                row = {"confounder": level, "response": label, "proportion": self.proportions[i, j]}
                if self.counts is not None:
                    row["count"] = int(self.counts[i, j])
                rows.append(row)
        return pd.DataFrame(rows)


class TableSchema(BaseModel):
    """Column roles for a delimited input file."""
    feature_cols: list[str] = Field(min_length=1)
    response_col: str
    confounder_cols: list[str] = Field(min_length=1)
    task: Task = "classification"
    id_col: str | None = None
    bins: dict[str, int | list[float]] = Field(
        default_factory=dict,
        description="Discretization for numeric confounder columns: quantile count or cut points.",
    )
    sep: str = ","


def _require_columns(frame: pd.DataFrame, columns: list[str], field: str) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"Missing column(s) {missing}", field=field)


def load_table(path: str | Path, schema: TableSchema) -> Dataset:
    """Read a delimited file with a header row into a Dataset."""
    try:
        frame = pd.read_csv(path, sep=schema.sep, encoding="utf-8")
    except FileNotFoundError as e:
        raise FormatError(f"Data file not found: {path}", field="data") from e
    except pd.errors.EmptyDataError as e:
        raise FormatError(f"Data file is empty: {path}", field="data") from e
    if frame.empty:
        raise FormatError(f"Data file has a header but no rows: {path}", field="data")

    _require_columns(frame, schema.feature_cols, "feature_cols")
    _require_columns(frame, [schema.response_col], "response_col")
    _require_columns(frame, schema.confounder_cols, "confounder_cols")
    if schema.id_col:
        _require_columns(frame, [schema.id_col], "id_col")

    features = frame[schema.feature_cols]
    if features.isna().to_numpy().any():
        raise MissingValueError("Missing value in a feature column", field="feature_cols")
    non_numeric = [c for c in schema.feature_cols if not pd.api.types.is_numeric_dtype(features[c])]
    if non_numeric:
        raise FormatError(f"Non-numeric feature column(s) {non_numeric}", field="feature_cols")

    raw_response = frame[schema.response_col]
    if raw_response.isna().any():
        raise MissingValueError("Missing value in the response column", field="response_col")
    labels = None
    if schema.task == "classification":
        distinct = sorted(raw_response.unique())
        if len(distinct) != 2:
            raise LabelError(
                f"Classification response needs exactly 2 labels, found {len(distinct)}",
                field="response_col",
            )
        labels = (str(distinct[0]), str(distinct[1]))
        response = (raw_response == distinct[1]).to_numpy(dtype=float)
    else:
        if not pd.api.types.is_numeric_dtype(raw_response):
            raise FormatError("Regression response must be numeric", field="response_col")
        response = raw_response.to_numpy(dtype=float)

    vectors = []
    for col in schema.confounder_cols:
        values = frame[col]
        if values.isna().any():
            raise MissingValueError(f"Missing value in confounder column {col}", field="confounder_cols")
        if pd.api.types.is_numeric_dtype(values):
            if col not in schema.bins:
                raise SchemaError(
                    f"Confounder column {col} is numeric; supply a discretization in bins.{col}",
                    field="bins",
                )
            vectors.append(discretize(values.to_numpy(dtype=float), schema.bins[col]))
        else:
            vectors.append(values.astype(str).to_numpy())

    ds = Dataset(
        features=features.to_numpy(dtype=float),
        response=response,
        confounder=combine_confounders(vectors),
        task=schema.task,
        ids=frame[schema.id_col].to_numpy() if schema.id_col else None,
        feature_names=tuple(schema.feature_cols),
        labels=labels,
    )
    logger.info("Loaded %s: n=%d p=%d levels=%d", path, ds.n, ds.p, ds.levels.size)
    return ds


def load_xyc(
    path: str | Path,
    x_col: str,
    y_col: str,
    c_col: str,
    sep: str = ",",
    bins: int | Sequence[float] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Numeric x and y plus a categorical c; integer-coded c keeps one level per code."""
    try:
        frame = pd.read_csv(path, sep=sep, encoding="utf-8")
    except FileNotFoundError as e:
        raise FormatError(f"Data file not found: {path}", field="data") from e
    except pd.errors.EmptyDataError as e:
        raise FormatError(f"Data file is empty: {path}", field="data") from e
    for col, field in ((x_col, "x_col"), (y_col, "y_col"), (c_col, "c_col")):
        _require_columns(frame, [col], field)
        if frame[col].isna().any():
            raise MissingValueError(f"Missing value in column {col}", field=field)
    for col, field in ((x_col, "x_col"), (y_col, "y_col")):
        if not pd.api.types.is_numeric_dtype(frame[col]):
            raise FormatError(f"Column {col} must be numeric", field=field)

    c = frame[c_col]
    if bins is not None:
        levels = discretize(c.to_numpy(dtype=float), bins)
    elif pd.api.types.is_float_dtype(c):
        raise SchemaError(f"Confounder column {c_col} is continuous; supply bins.{c_col}", field="bins")
    else:
        levels = c.astype(str).to_numpy()
    return frame[x_col].to_numpy(dtype=float), frame[y_col].to_numpy(dtype=float), levels


def write_table(ds: Dataset, path: str | Path, sep: str = ",") -> TableSchema:
    """Write a dataset in the ingestion format and return the matching schema."""
    frame = pd.DataFrame(ds.features, columns=list(ds.feature_names))
    frame["y"] = ds.response_labels() if ds.labels is not None else ds.response
    frame["c"] = ds.confounder
    id_col = None
    if ds.ids is not None:
        frame.insert(0, "id", ds.ids)
        id_col = "id"
    frame.to_csv(path, sep=sep, index=False, float_format="%.12g")
    return TableSchema(
        feature_cols=list(ds.feature_names),
        response_col="y",
        confounder_cols=["c"],
        task=ds.task,
        id_col=id_col,
        sep=sep,
    )


def _escape_level(level: str) -> str:
    return level.replace("\\", "\\\\").replace(LEVEL_SEPARATOR, "\\" + LEVEL_SEPARATOR)


def combine_confounders(vectors: Sequence[Sequence]) -> np.ndarray:
    """Paste several categorical vectors into one, row by row ("a|b")."""
    if not vectors:
        raise ContractError("Need at least one confounder vector")
    columns = [np.asarray(v).astype(str).ravel() for v in vectors]
    if len({c.shape[0] for c in columns}) != 1:
        raise ContractError("Confounder vectors differ in length", field="confounder_cols")
    if len(columns) == 1:
        return columns[0]
    return np.array([
        LEVEL_SEPARATOR.join(_escape_level(level) for level in row)
        for row in zip(*columns)
    ])


def _edge(value: float) -> str:
    # Shortest text that round-trips, so distinct edges give distinct level names.
    return repr(float(value))


def discretize(values: Sequence[float], bins: int | Sequence[float]) -> np.ndarray:
    """Map reals to half-open bins [lo, hi); the last bin is closed.

    ``bins`` is either a quantile count or strictly increasing cut points.
    """
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise BinningError("Cannot discretize missing or non-finite values")

    if isinstance(bins, (int, np.integer)):
        k = int(bins)
        if k < 2:
            raise BinningError(f"Need at least 2 bins, got {k}")
        distinct = np.unique(values).size
        if distinct < k:
            raise BinningError(f"{distinct} distinct value(s) cannot fill {k} quantile bins")
        edges = np.quantile(values, np.linspace(0.0, 1.0, k + 1))
        if np.unique(edges).size < k + 1:
            raise BinningError(f"Quantile edges collapse; too many ties for {k} bins")
        interior = edges[1:-1]
        names = [
            f"[{_edge(edges[i])},{_edge(edges[i + 1])}{']' if i == k - 1 else ')'}"
            for i in range(k)
        ]
    else:
        interior = np.asarray(bins, dtype=float).ravel()
        if interior.size < 1:
            raise BinningError("Need at least one cut point (2 bins)")
        if np.any(np.diff(interior) <= 0):
            raise BinningError("Cut points must be strictly increasing")
        bounds = [-np.inf, *interior, np.inf]
        names = [
            f"{'(' if i == 0 else '['}{_edge(bounds[i])},{_edge(bounds[i + 1])})"
            for i in range(interior.size + 1)
        ]

    codes = np.searchsorted(interior, values, side="right")
    return np.asarray(names)[codes]


def dummy_code(confounder: Sequence) -> np.ndarray:
    """n x (L-1) indicator matrix; levels sorted, first level dropped."""
    c = np.asarray(confounder).astype(str)
    levels = np.unique(c)
    return (c[:, None] == levels[None, 1:]).astype(float)


def _largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    alloc = np.floor(quotas + 1e-9).astype(int)
    remaining = total - int(alloc.sum())
    if remaining > 0:
        order = np.argsort(-(quotas - alloc), kind="stable")
        alloc[order[:remaining]] += 1
    return alloc


def _strata(ds: Dataset, stratify: Stratify) -> np.ndarray:
    if stratify == "none":
        return np.zeros(ds.n, dtype=int).astype(str)
    if stratify == "response":
        if ds.task != "classification":
            raise SplitError("Response stratification needs a classification task", field="stratify")
        return ds.response_labels()
    if stratify == "joint":
        if ds.task != "classification":
            return ds.confounder
        return combine_confounders([ds.confounder, ds.response_labels()])
    raise SplitError(f"Unknown stratification: {stratify}", field="stratify")


def split(
    ds: Dataset,
    test_fraction: float = 0.5,
    stratify: Stratify = "joint",
    seed: int = 0,
    *,
    test_size: int | None = None,
) -> SplitIndexes:
    """Seeded train/test split; each stratum's test share is within 1 row of its quota."""
    if test_size is not None:
        if not 0 < test_size < ds.n:
            raise SplitError(f"test_size {test_size} outside (0, {ds.n})", field="test_fraction")
        total = int(test_size)
        fraction = total / ds.n
    else:
        if not 0.0 < test_fraction < 1.0:
            raise SplitError(f"test_fraction {test_fraction} outside (0, 1)", field="test_fraction")
        fraction = float(test_fraction)
        total = int(np.floor(fraction * ds.n + 0.5))

    cells = _strata(ds, stratify)
    keys, counts = np.unique(cells, return_counts=True)
    alloc = np.minimum(_largest_remainder(fraction * counts, total), counts)

    rng = np.random.default_rng(seed)
    train, test = [], []
    for key, k in zip(keys, alloc):
        members = rng.permutation(np.flatnonzero(cells == key))
        test.append(members[:k])
        train.append(members[k:])
    train_idx = np.concatenate(train)
    test_idx = np.concatenate(test)

    if test_idx.size < 2 or train_idx.size < 2:
        raise SplitError(
            f"Split leaves {train_idx.size} training and {test_idx.size} test rows; need 2 each",
            field="test_fraction",
        )
    if ds.task == "classification":
        for name, idx in (("test", test_idx), ("training", train_idx)):
            if np.unique(ds.response[idx]).size < 2:
                raise SplitError(f"The {name} set would contain a single label", field="test_fraction")
    return SplitIndexes(train=train_idx, test=test_idx)


def subsample_to_joint(ds: Dataset, target: JointTable, seed: int = 0) -> Dataset:
    """Largest subsample whose (confounder, response) table matches ``target``."""
    if ds.task != "classification":
        raise ContractError("Joint-matched subsampling needs a classification task")
    props = target.proportions
    labels = ds.response_labels()
    counts = np.zeros(props.shape, dtype=int)
    members: dict[tuple[int, int], np.ndarray] = {}
    for i, level in enumerate(target.levels):
        for j, label in enumerate(target.labels):
            idx = np.flatnonzero((ds.confounder == level) & (labels == label))
            members[(i, j)] = idx
            counts[i, j] = idx.size
            if props[i, j] > 0 and idx.size == 0:
                raise ContractError(
                    f"Target cell ({level}, {label}) is positive but the data has no such rows",
                    field="target_joint",
                )

    positive = props > 0
    size = int(np.floor(np.min(counts[positive] / props[positive]) + 1e-9))
    while size > 0:
        alloc = _largest_remainder(props.ravel() * size, size).reshape(props.shape)
        if np.all(alloc <= counts):
            break
        size -= 1
    if size < 2:
        raise ContractError("Target joint table leaves fewer than 2 rows", field="target_joint")

    rng = np.random.default_rng(seed)
    chosen = [
        rng.choice(members[cell], size=int(alloc[cell]), replace=False)
        for cell in sorted(members)
        if alloc[cell] > 0
    ]
    order = rng.permutation(np.concatenate(chosen))
    logger.info("Joint-matched subsample: %d of %d rows", order.size, ds.n)
    return ds.subset(order)


def joint_from_prevalence(
    prevalence: float,
    risk_ratio: float,
    exposed_share: float = 0.5,
    *,
    exposed_level: str = "M",
    unexposed_level: str = "F",
    case_label: str = "1",
    control_label: str = "0",
) -> JointTable:
    """Joint table from an overall prevalence and an exposed/unexposed risk ratio.

    prevalence = share * q_exposed + (1 - share) * q_unexposed with
    q_exposed = risk_ratio * q_unexposed. For prevalence 1/3, ratio 2 and a
    50/50 split: exposed-case 2/9, unexposed-case 1/9, exposed-control 5/18,
    unexposed-control 7/18.
    """
    if not 0 < prevalence < 1 or not 0 < exposed_share < 1 or risk_ratio <= 0:
        raise ContractError("prevalence and exposed_share must lie in (0, 1), risk_ratio > 0")
    q_unexposed = prevalence / (exposed_share * risk_ratio + (1 - exposed_share))
    q_exposed = risk_ratio * q_unexposed
    if q_exposed > 1:
        raise ContractError(f"Constraints imply an exposed risk of {q_exposed:.3g} > 1")
    cells = {
        (exposed_level, case_label): exposed_share * q_exposed,
        (exposed_level, control_label): exposed_share * (1 - q_exposed),
        (unexposed_level, case_label): (1 - exposed_share) * q_unexposed,
        (unexposed_level, control_label): (1 - exposed_share) * (1 - q_unexposed),
    }
    levels = tuple(sorted({exposed_level, unexposed_level}))
    labels = (control_label, case_label)
    props = np.array([[cells[(level, label)] for label in labels] for level in levels])
    return JointTable(levels, labels, props / props.sum())
