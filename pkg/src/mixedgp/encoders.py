"""Per-level representations of categorical inputs.

A categorical input is made comparable by attaching a payload to each of its
levels, derived from the output values observed at that level: a conditional
mean, a (mean, std) pair, the whole empirical output distribution (univariate
or multivariate), a class-frequency histogram for label outputs, or a one-hot
indicator vector.  Tables are built on training data only and frozen into the
model; downstream code encodes rows by level lookup.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import MixedDataset
from .errors import ConfigError, DataError

ENCODING_KINDS = ("mean", "mean_std", "onehot", "distributional_1d",
                  "distributional_md", "histogram")


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Uniformly weighted sample cloud in R^d.

    Attributes
    ----------
    samples : ndarray, shape (m, d)
        One row per sample; d=1 for univariate payloads.
    """

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] < 1:
            raise DataError("empirical distribution needs an (m, d) sample block with m >= 1")
        if not np.all(np.isfinite(s)):
            raise DataError("non-finite sample in empirical distribution")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if s.shape[1] == 1:
            sorted_view = np.sort(s[:, 0])
            sorted_view.setflags(write=False)
            object.__setattr__(self, "_sorted", sorted_view)
        else:
            object.__setattr__(self, "_sorted", None)

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def sorted_1d(self) -> np.ndarray:
        """Sorted sample values; only defined for d=1."""
        if self._sorted is None:
            raise DataError("sorted view is only available for univariate distributions")
        return self._sorted

    def concat(self, other: "EmpiricalDistribution") -> "EmpiricalDistribution":
        """Multiset union of the two sample clouds (duplicates kept)."""
        if self.dim != other.dim:
            raise DataError(f"dimension mismatch in concat: {self.dim} vs {other.dim}")
        return EmpiricalDistribution(np.vstack([self.samples, other.samples]))


@dataclass(frozen=True)
class Histogram:
    """Class-frequency vector over a fixed label vocabulary."""

    freqs: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float)
        if f.ndim != 1 or f.size < 1:
            raise DataError("histogram needs a 1-D frequency vector")
        if np.any(f < 0) or abs(f.sum() - 1.0) > 1e-12:
            raise DataError("histogram frequencies must be nonnegative and sum to 1")
        f = f.copy()
        f.setflags(write=False)
        object.__setattr__(self, "freqs", f)


@dataclass(frozen=True)
class Partition:
    """Quantile partition of one continuous input, used for interaction cells.

    ``edges`` are the S+1 empirical-quantile cut points of the continuous
    column; bin s covers [edges[s], edges[s+1]) with the last bin closed on
    the right.  ``bin_to_cell`` maps (level, bin) to a payload row, so bins
    that were merged to avoid empty cells share one payload.
    """

    x_index: int
    x_name: str
    edges: np.ndarray
    base_levels: tuple[str, ...]
    bin_to_cell: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        m = np.asarray(self.bin_to_cell, dtype=np.int64)
        e.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "bin_to_cell", m)

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    def bin_of(self, x: np.ndarray) -> np.ndarray:
        """Bin index per value; out-of-range values land in the end bins."""
        return np.searchsorted(self.edges[1:-1], np.asarray(x, dtype=float), side="right")

    def cell_of(self, level_codes: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Payload row per (level, x) pair."""
        return self.bin_to_cell[np.asarray(level_codes, dtype=np.int64), self.bin_of(x)]


@dataclass(frozen=True)
class EncodingTable:
    """Frozen per-level payloads for one categorical input.

    Attributes
    ----------
    input_index : int
        Position among the dataset's categorical inputs (-1 for virtual
        interaction inputs derived from a partition).
    input_name : str
    kind : str
        One of ``mean``, ``mean_std``, ``onehot``, ``distributional_1d``,
        ``distributional_md``, ``histogram``.
    levels : tuple of str
        Payload labels; for partitioned tables these are cell labels.
    payloads : tuple
        One payload per level: ndarray for summary kinds,
        :class:`EmpiricalDistribution` or :class:`Histogram` otherwise.
    counts : ndarray
        Rows contributing to each payload; sums to the source row count.
    outputs : tuple of int
        Output columns the payloads were derived from (empty for onehot).
    partition : Partition or None
        Set only for interaction-partitioned tables.
    """

    input_index: int
    input_name: str
    kind: str
    levels: tuple[str, ...]
    payloads: tuple
    counts: np.ndarray
    outputs: tuple[int, ...] = ()
    partition: Partition | None = None

    def __post_init__(self):
        if self.kind not in ENCODING_KINDS:
            raise ConfigError(f"unknown encoding kind {self.kind!r}")
        if len(self.levels) != len(self.payloads):
            raise DataError("one payload per level is required")
        c = np.asarray(self.counts, dtype=np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "payloads", tuple(self.payloads))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def payload_dim(self) -> int:
        """Sample dimension for distributional tables, vector length otherwise."""
        p = self.payloads[0]
        if isinstance(p, EmpiricalDistribution):
            return p.dim
        if isinstance(p, Histogram):
            return p.freqs.size
        return np.asarray(p).size

    def level_index(self, label: str) -> int:
        try:
            return self.levels.index(label)
        except ValueError:
            raise DataError(f"level {label!r} not in table for input {self.input_name!r}") from None


def _level_rows(ds: MixedDataset, t: int):
    if not 0 <= t < ds.n_categorical:
        raise DataError(f"categorical input index {t} out of range")
    levels = ds.cat_levels[t]
    codes = ds.u[:, t]
    groups = []
    for l, label in enumerate(levels):
        rows = np.flatnonzero(codes == l)
        if rows.size == 0:
            raise DataError(f"level {label!r} of input {ds.categorical_names[t]!r} has no rows")
        groups.append(rows)
    return levels, groups


def _check_output(ds: MixedDataset, out: int):
    if not 0 <= out < ds.n_outputs:
        raise DataError(f"output index {out} out of range (dataset has {ds.n_outputs})")


def mean_encoding(ds: MixedDataset, t: int, out: int = 0) -> EncodingTable:
    """Encode each level by the conditional mean of one output.

    Level l maps to the average of output ``out`` over the rows where input
    ``t`` takes level l.  The payload is a length-1 vector so that the level
    can be treated as a virtual continuous feature.
    """
    _check_output(ds, out)
    levels, groups = _level_rows(ds, t)
    y = ds.y[:, out]
    payloads = tuple(np.array([y[rows].mean()]) for rows in groups)
    counts = np.array([rows.size for rows in groups])
    return EncodingTable(t, ds.categorical_names[t], "mean", levels, payloads, counts, (out,))


def mean_std_encoding(ds: MixedDataset, t: int, out: int = 0) -> EncodingTable:
    """Encode each level by (conditional mean, conditional population std).

    The population (divide-by-N) standard deviation makes singleton levels
    well-defined: they get std 0.  Payloads are length-2 vectors used as two
    virtual continuous features.
    """
    _check_output(ds, out)
    levels, groups = _level_rows(ds, t)
    y = ds.y[:, out]
    payloads = tuple(np.array([y[rows].mean(), y[rows].std()]) for rows in groups)
    counts = np.array([rows.size for rows in groups])
    return EncodingTable(t, ds.categorical_names[t], "mean_std", levels, payloads, counts, (out,))


def onehot_encoding(ds: MixedDataset, t: int) -> EncodingTable:
    """Encode each level by its one-hot indicator vector.

    Baseline encoding: all distinct level pairs are equally far apart, which
    reproduces the classical exchangeable treatment of categories.
    """
    levels, groups = _level_rows(ds, t)
    eye = np.eye(len(levels))
    payloads = tuple(eye[l] for l in range(len(levels)))
    counts = np.array([rows.size for rows in groups])
    return EncodingTable(t, ds.categorical_names[t], "onehot", levels, payloads, counts, ())


def distributional_encoding(ds: MixedDataset, t: int, outs=(0,)) -> EncodingTable:
    """Encode each level by its empirical output distribution.

    Parameters
    ----------
    ds : MixedDataset
    t : int
        Categorical input index.
    outs : sequence of int
        Output columns forming the sample space; one column gives a
        univariate cloud, several give a multivariate one.
    """
    outs = tuple(int(o) for o in outs)
    if not outs:
        raise ConfigError("distributional encoding needs at least one output column")
    for out in outs:
        _check_output(ds, out)
    levels, groups = _level_rows(ds, t)
    block = ds.y[:, list(outs)]
    payloads = tuple(EmpiricalDistribution(block[rows]) for rows in groups)
    counts = np.array([rows.size for rows in groups])
    kind = "distributional_1d" if len(outs) == 1 else "distributional_md"
    return EncodingTable(t, ds.categorical_names[t], kind, levels, payloads, counts, outs)


def histogram_encoding(ds: MixedDataset, t: int, out: int = 0) -> EncodingTable:
    """Encode each level by the class frequencies of a label-valued output.

    ``out`` indexes the dataset's label outputs.  Frequencies are computed
    over the rows of each level and sum to one.
    """
    if not 0 <= out < ds.y_cat.shape[1]:
        raise DataError(f"label output index {out} out of range (dataset has {ds.y_cat.shape[1]})")
    levels, groups = _level_rows(ds, t)
    n_classes = len(ds.out_levels[out])
    labels_col = ds.y_cat[:, out]
    payloads = []
    for rows in groups:
        counts_m = np.bincount(labels_col[rows], minlength=n_classes)
        payloads.append(Histogram(counts_m / rows.size))
    counts = np.array([rows.size for rows in groups])
    return EncodingTable(t, ds.categorical_names[t], "histogram", levels, tuple(payloads),
                         counts, (out,))


def merge_auxiliary(base: EncodingTable, aux: EncodingTable, mode: str) -> EncodingTable:
    """Fuse an auxiliary distributional table into a base table.

    ``concat`` pools the sample clouds level by level (multiset union);
    ``replace`` substitutes the auxiliary payload wherever one exists.
    Levels present only in the auxiliary table are appended, which is what
    makes prediction at unseen levels possible without refitting.
    """
    if mode not in ("concat", "replace"):
        raise ConfigError(f"unknown merge mode {mode!r}")
    for tab in (base, aux):
        if tab.kind not in ("distributional_1d", "distributional_md"):
            raise DataError("merge_auxiliary requires distributional tables")
    if base.payloads[0].dim != aux.payloads[0].dim:
        raise DataError("merge_auxiliary requires equal payload dimensions")
    aux_of = {lab: aux.payloads[i] for i, lab in enumerate(aux.levels)}
    aux_n = {lab: int(aux.counts[i]) for i, lab in enumerate(aux.levels)}
    levels = list(base.levels) + [lab for lab in aux.levels if lab not in base.levels]
    payloads, counts = [], []
    for lab in levels:
        if lab in aux_of and lab in base.levels:
            b = base.payloads[base.level_index(lab)]
            n_b = int(base.counts[base.level_index(lab)])
            if mode == "concat":
                payloads.append(b.concat(aux_of[lab]))
                counts.append(n_b + aux_n[lab])
            else:
                payloads.append(aux_of[lab])
                counts.append(aux_n[lab])
        elif lab in aux_of:
            payloads.append(aux_of[lab])
            counts.append(aux_n[lab])
        else:
            payloads.append(base.payloads[base.level_index(lab)])
            counts.append(int(base.counts[base.level_index(lab)]))
    return replace(base, levels=tuple(levels), payloads=tuple(payloads),
                   counts=np.array(counts))


def interaction_partition_encoding(ds: MixedDataset, t: int, x_index: int, n_bins: int,
                                   out: int = 0, empty_cell: str = "merge") -> EncodingTable:
    """Distributional encoding on (level x quantile-bin) interaction cells.

    The continuous input ``x_index`` is cut at its empirical S-quantiles into
    left-closed bins (last bin right-closed).  Each (level, bin) cell carries
    the empirical distribution of output ``out`` restricted to that cell.
    With ``empty_cell="merge"`` an empty bin is merged into its left
    neighbour (right neighbour for the leftmost bin) until every cell of the
    level is populated; ``"error"`` raises instead.

    ``n_bins=1`` degenerates to plain :func:`distributional_encoding`.
    """
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    if empty_cell not in ("merge", "error"):
        raise ConfigError(f"unknown empty_cell policy {empty_cell!r}")
    if not 0 <= x_index < ds.n_continuous:
        raise DataError(f"continuous input index {x_index} out of range")
    _check_output(ds, out)
    levels, groups = _level_rows(ds, t)
    x = ds.x[:, x_index]
    y = ds.y[:, out]
    edges = np.quantile(x, np.linspace(0.0, 1.0, n_bins + 1))
    bins = np.searchsorted(edges[1:-1], x, side="right")

    n_levels = len(levels)
    bin_to_cell = np.full((n_levels, n_bins), -1, dtype=np.int64)
    cell_levels, payloads, counts = [], [], []
    for l, rows in enumerate(groups):
        sizes = np.bincount(bins[rows], minlength=n_bins)
        run_of, n_runs = _merge_empty_bins(sizes, empty_cell, levels[l],
                                           ds.categorical_names[t])
        for r in range(n_runs):
            members = np.flatnonzero(run_of == r)
            rows_r = rows[np.isin(bins[rows], members)]
            cell = len(payloads)
            for s in members:
                bin_to_cell[l, s] = cell
            cell_levels.append(f"{levels[l]}|{members[0]}-{members[-1]}")
            payloads.append(EmpiricalDistribution(y[rows_r][:, None]))
            counts.append(rows_r.size)

    part = Partition(x_index, ds.continuous_names[x_index], edges, levels, bin_to_cell)
    return EncodingTable(-1, f"{ds.categorical_names[t]}*{part.x_name}", "distributional_1d",
                         tuple(cell_levels), tuple(payloads), np.array(counts), (out,), part)


def _merge_empty_bins(sizes, policy, level_label, input_name):
    """Assign each bin to a contiguous run so every run holds samples.

    A new run starts at every populated bin; empty bins join the run to
    their left (leading empty bins join the first populated run).  Returns
    (run index per bin, number of runs).
    """
    if not np.any(sizes):
        raise DataError(f"level {level_label!r} of {input_name!r} has no rows")
    if policy == "error" and np.any(sizes == 0):
        s = int(np.flatnonzero(sizes == 0)[0])
        raise DataError(f"empty cell (level {level_label!r}, bin {s}) of {input_name!r}")
    run_of = np.empty(len(sizes), dtype=np.int64)
    run = -1
    for s, size in enumerate(sizes):
        if size > 0:
            run += 1
        run_of[s] = run
    run_of[run_of < 0] = 0
    return run_of, run + 1
