"""Tabular datasets with mixed continuous and categorical columns.

A dataset is described by an ordered column schema.  Continuous inputs are
stored as a float block, categorical inputs as integer level codes against a
frozen per-column vocabulary, and outputs as a float block (plus an integer
block for label-valued outputs).  All model-facing code receives these blocks,
never raw strings.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError

_KINDS = ("continuous", "categorical", "output")


@dataclass(frozen=True)
class ColumnSchema:
    """Declares one column: its name, role, and (optionally) its levels.

    Parameters
    ----------
    name : str
        Column header, unique within a schema.
    kind : str
        One of ``continuous``, ``categorical``, ``output``.
    levels : tuple of str, optional
        Fixed vocabulary.  For ``categorical`` columns this pins the level
        order; if omitted the vocabulary is inferred from data in order of
        first appearance.  An ``output`` column with levels is label-valued.
    """

    name: str
    kind: str
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.levels is not None:
            object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
            if len(set(self.levels)) != len(self.levels):
                raise ConfigError(f"duplicate levels in column {self.name!r}")
            if self.kind == "continuous":
                raise ConfigError(f"continuous column {self.name!r} cannot declare levels")

    @property
    def is_label_output(self) -> bool:
        return self.kind == "output" and self.levels is not None


def load_schema(path) -> tuple[ColumnSchema, ...]:
    """Read a column schema from a JSON file.

    The file holds a list of objects with keys ``name``, ``kind`` and an
    optional ``levels`` list.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read schema {path}: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise ConfigError("schema file must hold a non-empty list of columns")
    cols = []
    for entry in raw:
        if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
            raise ConfigError(f"malformed schema entry: {entry!r}")
        levels = entry.get("levels")
        cols.append(ColumnSchema(str(entry["name"]), str(entry["kind"]),
                                 tuple(levels) if levels is not None else None))
    names = [c.name for c in cols]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate column names in schema")
    return tuple(cols)


def schema_to_json(schema) -> list[dict]:
    """Serialize a schema to plain JSON-compatible objects."""
    out = []
    for col in schema:
        entry = {"name": col.name, "kind": col.kind}
        if col.levels is not None:
            entry["levels"] = list(col.levels)
        out.append(entry)
    return out


@dataclass(frozen=True)
class MixedDataset:
    """Column-schema'd data split into typed blocks.

    Attributes
    ----------
    schema : tuple of ColumnSchema
        Columns in original order.
    x : ndarray, shape (n, p)
        Continuous inputs.
    u : ndarray, shape (n, q)
        Categorical input level codes (row-aligned with ``cat_levels``).
    y : ndarray, shape (n, d)
        Numeric outputs.  ``d`` may be zero for design-only data.
    y_cat : ndarray, shape (n, k)
        Label-valued output codes (``k`` is usually zero).
    cat_levels : tuple of tuple of str
        Frozen vocabulary for each categorical input.
    out_levels : tuple of tuple of str
        Frozen vocabulary for each label-valued output.
    """

    schema: tuple[ColumnSchema, ...]
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    y_cat: np.ndarray = field(default=None)
    cat_levels: tuple[tuple[str, ...], ...] = ()
    out_levels: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        u = np.atleast_2d(np.asarray(self.u, dtype=np.int64))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        y_cat = self.y_cat
        if y_cat is None:
            y_cat = np.zeros((x.shape[0], 0), dtype=np.int64)
        y_cat = np.atleast_2d(np.asarray(y_cat, dtype=np.int64))
        n = x.shape[0]
        for name, arr in (("u", u), ("y", y), ("y_cat", y_cat)):
            if arr.shape[0] != n:
                raise DataError(f"block {name} has {arr.shape[0]} rows, expected {n}")
        if not np.all(np.isfinite(x)):
            raise DataError("non-finite value in continuous inputs")
        if y.size and not np.all(np.isfinite(y)):
            raise DataError("non-finite value in outputs")
        if u.shape[1] != len(self.cat_levels):
            raise DataError("cat_levels does not match categorical block width")
        if y_cat.shape[1] != len(self.out_levels):
            raise DataError("out_levels does not match label output block width")
        for t, levels in enumerate(self.cat_levels):
            if u.shape[0] and (u[:, t].min() < 0 or u[:, t].max() >= len(levels)):
                raise DataError(f"level code out of range in categorical column {t}")
        for t, levels in enumerate(self.out_levels):
            if y_cat.shape[0] and (y_cat[:, t].min() < 0 or y_cat[:, t].max() >= len(levels)):
                raise DataError(f"label code out of range in output column {t}")
        kinds = {"continuous": x.shape[1], "categorical": u.shape[1]}
        n_out = y.shape[1] + y_cat.shape[1]
        declared = {k: sum(1 for c in self.schema if c.kind == k) for k in ("continuous", "categorical", "output")}
        if declared["continuous"] != kinds["continuous"] or declared["categorical"] != kinds["categorical"]:
            raise DataError("schema does not match block shapes")
        if declared["output"] != n_out:
            raise DataError("schema output count does not match output blocks")
        for arr in (x, u, y, y_cat):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_cat", y_cat)
        object.__setattr__(self, "cat_levels", tuple(tuple(l) for l in self.cat_levels))
        object.__setattr__(self, "out_levels", tuple(tuple(l) for l in self.out_levels))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def n_continuous(self) -> int:
        return self.x.shape[1]

    @property
    def n_categorical(self) -> int:
        return self.u.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.y.shape[1]

    @property
    def continuous_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.schema if c.kind == "continuous")

    @property
    def categorical_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.schema if c.kind == "categorical")

    @property
    def output_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.schema if c.kind == "output" and c.levels is None)

    @property
    def label_output_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.schema if c.is_label_output)

    def subset(self, rows) -> "MixedDataset":
        """Return a new dataset holding the given rows (in the given order)."""
        rows = np.asarray(rows, dtype=np.int64)
        return replace(self, x=self.x[rows], u=self.u[rows], y=self.y[rows],
                       y_cat=self.y_cat[rows])

    def level_codes(self, name: str) -> np.ndarray:
        """Level-code column for the categorical input called ``name``."""
        try:
            t = self.categorical_names.index(name)
        except ValueError:
            raise DataError(f"no categorical input named {name!r}") from None
        return self.u[:, t]


def load_csv(path, schema) -> MixedDataset:
    """Read a CSV file against a schema and return a :class:`MixedDataset`.

    The header must contain every schema column (extra columns are an error).
    Categorical vocabularies come from the schema when declared, otherwise
    from the data in order of first appearance.
    """
    schema = tuple(schema)
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(row for row in fh if not row.startswith("#"))
            rows = list(reader)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: need a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    want = [c.name for c in schema]
    if sorted(header) != sorted(want):
        missing = set(want) - set(header)
        extra = set(header) - set(want)
        raise DataError(f"{path}: header mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
    pos = {name: header.index(name) for name in want}

    body = rows[1:]
    n = len(body)
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")

    x_cols, u_cols, y_cols, ycat_cols = [], [], [], []
    cat_levels, out_levels = [], []
    for col in schema:
        raw = [body[i][pos[col.name]].strip() for i in range(n)]
        if col.kind == "continuous" or (col.kind == "output" and col.levels is None):
            try:
                vals = np.array([float(v) for v in raw])
            except ValueError as exc:
                raise DataError(f"{path}: non-numeric value in column {col.name!r}: {exc}") from exc
            (x_cols if col.kind == "continuous" else y_cols).append(vals)
        else:
            if col.levels is not None:
                vocab = list(col.levels)
                index = {lab: i for i, lab in enumerate(vocab)}
                codes = np.empty(n, dtype=np.int64)
                for i, v in enumerate(raw):
                    if v not in index:
                        raise DataError(f"{path}: unknown level {v!r} in column {col.name!r}")
                    codes[i] = index[v]
            else:
                vocab, index = [], {}
                codes = np.empty(n, dtype=np.int64)
                for i, v in enumerate(raw):
                    if v not in index:
                        index[v] = len(vocab)
                        vocab.append(v)
                    codes[i] = index[v]
            if col.kind == "categorical":
                u_cols.append(codes)
                cat_levels.append(tuple(vocab))
            else:
                ycat_cols.append(codes)
                out_levels.append(tuple(vocab))

    def stack(cols, dtype):
        if not cols:
            return np.zeros((n, 0), dtype=dtype)
        return np.column_stack(cols).astype(dtype)

    return MixedDataset(schema, stack(x_cols, float), stack(u_cols, np.int64),
                        stack(y_cols, float), stack(ycat_cols, np.int64),
                        tuple(cat_levels), tuple(out_levels))


@dataclass(frozen=True)
class Standardizer:
    """Per-column z-score maps for continuous inputs and numeric outputs.

    Each continuous input and numeric output column is centered by its mean
    and scaled by its sample standard deviation (ddof=1).  Level codes pass
    through untouched.
    """

    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: np.ndarray
    y_sd: np.ndarray

    @classmethod
    def fit(cls, ds: MixedDataset) -> "Standardizer":
        if ds.n < 2:
            raise DataError("standardization needs at least two rows")
        x_mean = ds.x.mean(axis=0)
        x_sd = ds.x.std(axis=0, ddof=1)
        if np.any(x_sd <= 0):
            names = [ds.continuous_names[i] for i in np.flatnonzero(x_sd <= 0)]
            raise DataError(f"constant continuous column(s): {names}")
        y_mean = ds.y.mean(axis=0)
        y_sd = ds.y.std(axis=0, ddof=1) if ds.y.size else np.ones(ds.n_outputs)
        if np.any(y_sd <= 0):
            names = [ds.output_names[i] for i in np.flatnonzero(y_sd <= 0)]
            raise DataError(f"constant output column(s): {names}")
        return cls(x_mean, x_sd, y_mean, y_sd)

    def transform_x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_sd

    def inverse_x(self, x_std: np.ndarray) -> np.ndarray:
        return x_std * self.x_sd + self.x_mean

    def transform_y(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_mean) / self.y_sd

    def inverse_y(self, y_std: np.ndarray) -> np.ndarray:
        return y_std * self.y_sd + self.y_mean

    def transform(self, ds: MixedDataset) -> MixedDataset:
        y = self.transform_y(ds.y) if ds.y.size else ds.y
        return replace(ds, x=self.transform_x(ds.x), y=y)

    def inverse(self, ds: MixedDataset) -> MixedDataset:
        y = self.inverse_y(ds.y) if ds.y.size else ds.y
        return replace(ds, x=self.inverse_x(ds.x), y=y)

    def to_dict(self) -> dict:
        return {"x_mean": self.x_mean.tolist(), "x_sd": self.x_sd.tolist(),
                "y_mean": self.y_mean.tolist(), "y_sd": self.y_sd.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("x_mean", "x_sd", "y_mean", "y_sd")))


def standardize(ds: MixedDataset) -> tuple[MixedDataset, Standardizer]:
    """Fit a :class:`Standardizer` on ``ds`` and return the transformed copy."""
    std = Standardizer.fit(ds)
    return std.transform(ds), std


def split(ds: MixedDataset, test_fraction: float, seed: int,
          level_policy: str = "resample", max_tries: int = 1000):
    """Random train/test split that keeps every level visible in training.

    Parameters
    ----------
    ds : MixedDataset
    test_fraction : float
        Fraction of rows routed to the test part (0 < f < 1 after rounding).
    seed : int
        Seed for the permutation; the split is a pure function of it.
    level_policy : {"resample", "strict"}
        What to do when some categorical level lands entirely in the test
        part: redraw the permutation (up to ``max_tries``) or raise.

    Returns
    -------
    (train, test) : tuple of MixedDataset
    """
    if level_policy not in ("resample", "strict"):
        raise ConfigError(f"unknown level_policy {level_policy!r}")
    n_test = int(round(ds.n * float(test_fraction)))
    if not 1 <= n_test <= ds.n - 1:
        raise DataError(f"test_fraction {test_fraction} leaves an empty part for n={ds.n}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        perm = rng.permutation(ds.n)
        train_rows = np.sort(perm[n_test:])
        covered = all(
            np.array_equal(np.unique(ds.u[train_rows, t]), np.arange(len(levels)))
            for t, levels in enumerate(ds.cat_levels)
        ) and all(
            np.array_equal(np.unique(ds.y_cat[train_rows, t]), np.arange(len(levels)))
            for t, levels in enumerate(ds.out_levels)
        )
        if covered:
            return ds.subset(train_rows), ds.subset(np.sort(perm[:n_test]))
        if level_policy == "strict":
            raise DataError("a categorical level is absent from the training part")
    raise DataError(f"could not cover all levels in training after {max_tries} tries")
