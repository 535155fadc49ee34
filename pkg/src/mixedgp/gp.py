"""Product-kernel Gaussian-process regression over mixed inputs.

The covariance between two rows is a product of one factor per continuous
input (a 1-D Matern 5/2 or squared-exponential kernel on |dx|/ell) and one
factor per categorical-input encoding.  Summary encodings (mean, mean/std)
enter as virtual continuous features through the same 1-D kernel; all other
encodings enter through a level-indexed Gram matrix T = exp(-gamma * dist^beta)
built from a frozen level distance matrix.  Outputs are standardized and the
prior mean is zero on the standardized scale.

Training maximizes the log marginal likelihood over log lengthscales, log
gammas and (optionally) a log relative nugget with multi-start Nelder-Mead;
the signal variance is profiled in closed form.  Prediction, fast
leave-one-out residuals, and LOO-driven encoding selection operate on the
frozen model.
"""

from __future__ import annotations

import itertools
import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import Bounds, minimize

from .data import ColumnSchema, MixedDataset, Standardizer, schema_to_json
from .distances import (DEFAULT_DIRECTIONS, DEFAULT_QUANTILES, HISTOGRAM_METRICS,
                        LevelDistanceMatrix, SubstitutionKernelParams,
                        distance_matrix_to_json, level_distance_matrix,
                        substitution_exponent, substitution_gram)
from .encoders import (EmpiricalDistribution, EncodingTable, Histogram, Partition,
                       distributional_encoding, histogram_encoding,
                       interaction_partition_encoding, mean_encoding,
                       mean_std_encoding, merge_auxiliary, onehot_encoding)
from .errors import ConfigError, DataError, NumericalError

SQRT5 = math.sqrt(5.0)
LOG_2PI = math.log(2.0 * math.pi)
LOG_SCALE_BOUNDS = (math.log(1e-2), math.log(1e2))
LOG_TAU_BOUNDS = (math.log(1e-8), 0.0)
NOISELESS_TAU = 1e-8
CHOLESKY_JITTERS = (0.0, 1e-10, 1e-8, 1e-6)
CONTINUOUS_KERNELS = ("matern52", "gaussian")

MODEL_FORMAT = "mixedgp-model"
MODEL_VERSION = 1


def matern52(d, ell: float):
    """Matern 5/2 correlation (1 + z + z^2/3) exp(-z) with z = sqrt(5) d / ell.

    Equals 1 at d = 0 and decays to 0; ``d`` may be a scalar or array of
    nonnegative distances.
    """
    if ell <= 0:
        raise ConfigError(f"lengthscale must be positive, got {ell}")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise DataError("matern52 requires nonnegative distances")
    z = (SQRT5 / ell) * d
    return (1.0 + z + z * z / 3.0) * np.exp(-z)


def gaussian_kernel(d, ell: float):
    """Squared-exponential correlation exp(-(d/ell)^2 / 2)."""
    if ell <= 0:
        raise ConfigError(f"lengthscale must be positive, got {ell}")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise DataError("gaussian_kernel requires nonnegative distances")
    z = d / ell
    return np.exp(-0.5 * z * z)


def _corr_1d(d, ell: float, kind: str):
    # hot path: no validation, d assumed nonnegative
    if kind == "matern52":
        z = (SQRT5 / ell) * d
        return (1.0 + z + z * z / 3.0) * np.exp(-z)
    z = d / ell
    return np.exp(-0.5 * z * z)


_ENCODINGS = ("mean", "mean_std", "onehot", "distributional", "histogram")
_DIST_METRICS = ("w2", "sw2", "mmd2")


@dataclass(frozen=True)
class FactorSpec:
    """How one categorical input enters the product kernel.

    Parameters
    ----------
    encoding : str
        ``mean``, ``mean_std``, ``onehot``, ``distributional`` or
        ``histogram``.
    metric : str or None
        Distance between level payloads.  ``None`` (mean/mean_std only)
        routes the summaries through the continuous kernel as virtual
        features; otherwise one of ``euclid2``, ``w2``, ``sw2``, ``mmd2``,
        ``chi2``, ``tv``, ``hellinger2`` as compatible with the encoding.
    outputs : tuple of int
        Output columns the payloads are derived from (label-output index
        for histograms, empty for onehot).
    beta : float
        Substitution-kernel exponent in [0, 2]; fixed, not optimized.
    partition : (x_index, n_bins) or None
        Replace the plain level encoding by interaction cells partitioned
        along one continuous input.
    """

    encoding: str
    metric: str | None = None
    outputs: tuple[int, ...] = (0,)
    beta: float = 1.0
    partition: tuple[int, int] | None = None

    def __post_init__(self):
        if self.encoding not in _ENCODINGS:
            raise ConfigError(f"unknown encoding {self.encoding!r}")
        object.__setattr__(self, "outputs", tuple(int(o) for o in self.outputs))
        if not 0.0 <= self.beta <= 2.0:
            raise ConfigError(f"beta must lie in [0, 2], got {self.beta}")
        metric = self.metric
        if self.encoding in ("mean", "mean_std"):
            if metric not in (None, "euclid2"):
                raise ConfigError(f"{self.encoding} supports metric None or 'euclid2'")
            if len(self.outputs) != 1:
                raise ConfigError(f"{self.encoding} encodes exactly one output")
        elif self.encoding == "onehot":
            object.__setattr__(self, "metric", "euclid2")
            object.__setattr__(self, "outputs", ())
            if metric not in (None, "euclid2"):
                raise ConfigError("onehot supports only the euclid2 metric")
        elif self.encoding == "distributional":
            if metric is None:
                metric = "w2" if len(self.outputs) == 1 else "sw2"
                object.__setattr__(self, "metric", metric)
            if self.metric not in _DIST_METRICS:
                raise ConfigError(f"distributional encoding needs metric in {_DIST_METRICS}")
            if not self.outputs:
                raise ConfigError("distributional encoding needs at least one output")
            if self.metric == "w2" and len(self.outputs) != 1:
                raise ConfigError("metric 'w2' requires a single output column")
        else:  # histogram
            if metric is None:
                object.__setattr__(self, "metric", "chi2")
            if self.metric not in HISTOGRAM_METRICS:
                raise ConfigError(f"histogram encoding needs metric in {HISTOGRAM_METRICS}")
            if len(self.outputs) != 1:
                raise ConfigError("histogram encoding uses exactly one label output")
        if self.partition is not None:
            if self.encoding != "distributional" or len(self.outputs) != 1:
                raise ConfigError("partitioned factors require a univariate distributional encoding")
            x_index, n_bins = self.partition
            object.__setattr__(self, "partition", (int(x_index), int(n_bins)))

    def to_dict(self) -> dict:
        return {"encoding": self.encoding, "metric": self.metric,
                "outputs": list(self.outputs), "beta": self.beta,
                "partition": list(self.partition) if self.partition else None}

    @classmethod
    def from_dict(cls, d: dict) -> "FactorSpec":
        part = d.get("partition")
        return cls(d["encoding"], d.get("metric"), tuple(d.get("outputs", ())),
                   d.get("beta", 1.0), tuple(part) if part else None)


def method_factors(name: str, n_outputs: int, n_label_outputs: int,
                   target: int = 0) -> tuple[FactorSpec, ...]:
    """Expand a method name into factor specs for one categorical input."""
    if name == "onehot":
        return (FactorSpec("onehot"),)
    if name in ("mean", "mean_std"):
        return (FactorSpec(name, None, (target,)),)
    if name in ("w2", "sw2", "mmd"):
        metric = {"w2": "w2", "sw2": "sw2", "mmd": "mmd2"}[name]
        return (FactorSpec("distributional", metric, (target,)),)
    if name in ("multi_1d_w2", "multi_1d_mmd"):
        metric = "w2" if name.endswith("w2") else "mmd2"
        return tuple(FactorSpec("distributional", metric, (k,)) for k in range(n_outputs))
    if name in ("2d_mmd", "2d_sw2"):
        metric = "mmd2" if name.endswith("mmd") else "sw2"
        return (FactorSpec("distributional", metric, tuple(range(n_outputs))),)
    if name in ("hist_chi2", "hist_tv", "hist_hellinger2"):
        if n_label_outputs < 1:
            raise ConfigError(f"method {name!r} needs a label-valued output column")
        return (FactorSpec("histogram", name.removeprefix("hist_"), (0,)),)
    raise ConfigError(f"unknown encoding method {name!r}")


METHOD_NAMES = ("onehot", "mean", "mean_std", "w2", "sw2", "mmd",
                "multi_1d_w2", "multi_1d_mmd", "2d_mmd", "2d_sw2",
                "hist_chi2", "hist_tv", "hist_hellinger2")


def resolve_plan(ds: MixedDataset, plan, target: int = 0) -> dict[str, tuple[FactorSpec, ...]]:
    """Normalize a plan argument into per-input factor-spec tuples.

    ``plan`` may be a method name applied to every categorical input, or a
    dict mapping input names to a method name, a :class:`FactorSpec`, or a
    list of specs.  Every categorical input must be covered.
    """
    names = ds.categorical_names
    if isinstance(plan, str):
        mapping = {nm: plan for nm in names}
    elif isinstance(plan, dict):
        mapping = plan
        missing = set(names) - set(mapping)
        unknown = set(mapping) - set(names)
        if missing or unknown:
            raise ConfigError(f"plan must cover the categorical inputs exactly "
                              f"(missing={sorted(missing)}, unknown={sorted(unknown)})")
    else:
        raise ConfigError("plan must be a method name or a dict per categorical input")
    resolved = {}
    for nm in names:
        entry = mapping[nm]
        if isinstance(entry, str):
            resolved[nm] = method_factors(entry, ds.n_outputs, len(ds.out_levels), target)
        elif isinstance(entry, FactorSpec):
            resolved[nm] = (entry,)
        elif isinstance(entry, (list, tuple)) and entry and all(isinstance(e, FactorSpec) for e in entry):
            resolved[nm] = tuple(entry)
        else:
            raise ConfigError(f"invalid plan entry for {nm!r}: {entry!r}")
    return resolved


@dataclass(frozen=True)
class KernelFactor:
    """One frozen kernel factor: encoding table, distances, and row codes."""

    input_name: str
    input_index: int
    label: str
    spec: FactorSpec
    table: EncodingTable
    dist: LevelDistanceMatrix | None
    sw_seed: int | None
    train_cells: np.ndarray
    train_virtual: np.ndarray | None
    virtual_names: tuple[str, ...]

    @property
    def is_virtual(self) -> bool:
        return self.dist is None

    def payload_matrix(self) -> np.ndarray:
        return np.vstack([np.asarray(p, dtype=float) for p in self.table.payloads])


@dataclass(frozen=True)
class KernelConfig:
    """Trained kernel hyperparameters.

    ``feature_names``/``lengthscales`` cover the continuous inputs followed
    by any virtual summary features; ``factor_labels``/``gammas``/``betas``
    cover the distance-substitution factors.  ``tau`` is the relative nugget
    eta^2 / sigma^2 actually optimized; ``eta2 = tau * sigma2``.
    """

    continuous_kernel: str
    feature_names: tuple[str, ...]
    lengthscales: np.ndarray
    factor_labels: tuple[str, ...]
    metrics: tuple[str, ...]
    gammas: np.ndarray
    betas: np.ndarray
    sigma2: float
    eta2: float
    tau: float

    def __post_init__(self):
        if self.continuous_kernel not in CONTINUOUS_KERNELS:
            raise ConfigError(f"unknown continuous kernel {self.continuous_kernel!r}")
        ls = np.asarray(self.lengthscales, dtype=float)
        g = np.asarray(self.gammas, dtype=float)
        b = np.asarray(self.betas, dtype=float)
        if np.any(ls <= 0) or np.any(g <= 0) or self.sigma2 <= 0 or self.eta2 < 0:
            raise ConfigError("lengthscales, gammas and sigma2 must be positive; eta2 >= 0")
        if np.any((b < 0) | (b > 2)):
            raise ConfigError("betas must lie in [0, 2]")
        for arr in (ls, g, b):
            arr.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "gammas", g)
        object.__setattr__(self, "betas", b)

    def to_dict(self) -> dict:
        return {"continuous_kernel": self.continuous_kernel,
                "feature_names": list(self.feature_names),
                "lengthscales": self.lengthscales.tolist(),
                "factor_labels": list(self.factor_labels),
                "metrics": list(self.metrics),
                "gammas": self.gammas.tolist(),
                "betas": self.betas.tolist(),
                "sigma2": self.sigma2, "eta2": self.eta2, "tau": self.tau}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelConfig":
        return cls(d["continuous_kernel"], tuple(d["feature_names"]),
                   np.asarray(d["lengthscales"], dtype=float), tuple(d["factor_labels"]),
                   tuple(d["metrics"]), np.asarray(d["gammas"], dtype=float),
                   np.asarray(d["betas"], dtype=float), d["sigma2"], d["eta2"], d["tau"])


@dataclass(frozen=True)
class Prediction:
    """Posterior mean and variance on the original output scale."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float)
        v = np.asarray(self.variance, dtype=float)
        if m.shape != v.shape:
            raise DataError("mean and variance must share a shape")
        if np.any(v < 0):
            raise DataError("negative predictive variance")
        m.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "variance", v)


def _cholesky_with_jitter(R: np.ndarray):
    """Lower Cholesky factor of R with escalating diagonal jitter.

    Returns (L, jitter) or (None, None) when even the largest jitter fails.
    """
    for jit in CHOLESKY_JITTERS:
        M = R if jit == 0.0 else R + jit * np.eye(R.shape[0])
        try:
            return np.linalg.cholesky(M), jit
        except np.linalg.LinAlgError:
            continue
    return None, None


def log_marginal_likelihood(gram: np.ndarray, y: np.ndarray, noise_variance: float = 0.0) -> float:
    """Gaussian log marginal likelihood of y under covariance gram + noise*I.

    Evaluates -y'(K+n I)^{-1}y/2 - log det(K+n I)/2 - (n/2) log 2pi through
    the Cholesky factor, escalating diagonal jitter from 1e-10 to 1e-6 if
    the matrix is numerically indefinite.
    """
    K = np.asarray(gram, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if K.shape != (n, n):
        raise DataError(f"gram shape {K.shape} does not match {n} targets")
    if noise_variance < 0:
        raise ConfigError("noise variance must be nonnegative")
    L, _ = _cholesky_with_jitter(K + noise_variance * np.eye(n))
    if L is None:
        raise NumericalError("covariance not positive definite after jitter escalation")
    alpha = cho_solve((L, True), y)
    return float(-0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI)


def _aux_input_index(aux: MixedDataset, name: str) -> int:
    try:
        return aux.categorical_names.index(name)
    except ValueError:
        raise DataError(f"auxiliary data lacks categorical input {name!r}") from None


def _build_factor(ds_std: MixedDataset, t: int, j: int, suffix: str, spec: FactorSpec,
                  seed: int, r: float, n_quantiles: int, n_directions: int,
                  aux_std: MixedDataset | None, aux_mode: str) -> KernelFactor:
    name = ds_std.categorical_names[t]
    if spec.encoding == "mean":
        table = mean_encoding(ds_std, t, spec.outputs[0])
    elif spec.encoding == "mean_std":
        table = mean_std_encoding(ds_std, t, spec.outputs[0])
    elif spec.encoding == "onehot":
        table = onehot_encoding(ds_std, t)
    elif spec.encoding == "histogram":
        table = histogram_encoding(ds_std, t, spec.outputs[0])
    else:
        if spec.partition is not None:
            x_index, n_bins = spec.partition
            table = interaction_partition_encoding(ds_std, t, x_index, n_bins, out=spec.outputs[0])
        else:
            table = distributional_encoding(ds_std, t, spec.outputs)
            if aux_std is not None:
                aux_table = distributional_encoding(aux_std, _aux_input_index(aux_std, name),
                                                    spec.outputs)
                table = merge_auxiliary(table, aux_table, aux_mode)

    if spec.partition is not None:
        cells = table.partition.cell_of(ds_std.u[:, t], ds_std.x[:, spec.partition[0]])
    else:
        # source levels lead the (possibly merged) table in original order
        cells = ds_std.u[:, t]

    label = (table.input_name if spec.partition is not None else name) + suffix
    if spec.metric is None:
        mat = np.vstack([np.asarray(p, dtype=float) for p in table.payloads])
        virtual = mat[cells]
        vnames = (f"{label}.mean",) if spec.encoding == "mean" else (f"{label}.mean", f"{label}.std")
        return KernelFactor(name, t, label, spec, table, None, None, cells, virtual, vnames)

    sw_seed = None
    if spec.metric == "sw2":
        sw_seed = int(np.random.SeedSequence([seed, t, j]).generate_state(1)[0])
    dist = level_distance_matrix(table, spec.metric, r=r, n_quantiles=n_quantiles,
                                 n_directions=n_directions, seed=sw_seed or 0)
    return KernelFactor(name, t, label, spec, table, dist, sw_seed, cells, None, ())


@dataclass
class GPModel:
    """Trained surrogate; immutable by convention after fit.

    Holds the frozen encodings and distance matrices, trained
    :class:`KernelConfig`, standardizer, training rows, the lower Cholesky
    factor of K + eta^2 I (absolute scale) and the dual weights
    (K + eta^2 I)^{-1} y on standardized outputs.
    """

    schema: tuple[ColumnSchema, ...]
    cat_levels: tuple[tuple[str, ...], ...]
    output: int
    standardizer: Standardizer
    factors: tuple[KernelFactor, ...]
    config: KernelConfig
    x_std: np.ndarray
    u: np.ndarray
    y_std: np.ndarray
    cholesky: np.ndarray
    dual_weights: np.ndarray
    loglik: float
    noise: bool
    seed: int
    estimator: dict
    fit_info: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.y_std.size

    def predict(self, test: MixedDataset, include_noise: bool = False,
                aux: MixedDataset | None = None) -> Prediction:
        return predict(self, test, include_noise=include_noise, aux=aux)

    def loo_residuals(self, original_scale: bool = True):
        return loo_residuals(self, original_scale=original_scale)

    def train_gram(self, include_nugget: bool = True) -> np.ndarray:
        """sigma^2 C (+ eta^2 I) over the training rows."""
        C = _correlation(self, self.x_std, [(f.train_cells, f.train_virtual) for f in self.factors])
        K = self.config.sigma2 * C
        if include_nugget:
            K = K + self.config.eta2 * np.eye(self.n)
        return K

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(model_to_json(self), fh)

    @classmethod
    def load(cls, path) -> "GPModel":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read model {path}: {exc}") from exc
        return model_from_json(payload)


def _gammas_by_factor(model: GPModel) -> list[float]:
    gam = iter(model.config.gammas)
    return [None if f.is_virtual else float(next(gam)) for f in model.factors]


def _correlation(model: GPModel, xs_b: np.ndarray, enc_b, xs_a=None, enc_a=None,
                 factors=None) -> np.ndarray:
    """Correlation block between row set B and row set A (default: training).

    ``enc_*`` holds one (cells, virtual) pair per factor; ``xs_*`` the
    standardized continuous block.  Factor Grams T are rebuilt from the
    frozen distance matrices at the trained (gamma, beta); ``factors`` may
    substitute tables extended with auxiliary levels.
    """
    cfg = model.config
    factors = model.factors if factors is None else factors
    if xs_a is None:
        xs_a = model.x_std
        enc_a = [(f.train_cells, f.train_virtual) for f in factors]
    C = np.ones((xs_b.shape[0], xs_a.shape[0]))
    kind = cfg.continuous_kernel
    p = xs_b.shape[1]
    for s in range(p):
        d = np.abs(xs_b[:, s, None] - xs_a[None, :, s])
        C *= _corr_1d(d, cfg.lengthscales[s], kind)
    v_ofs = p
    gam = iter(cfg.gammas)
    for f, (cells_b, virt_b), (cells_a, virt_a) in zip(factors, enc_b, enc_a):
        if f.is_virtual:
            for k in range(virt_b.shape[1]):
                d = np.abs(virt_b[:, k, None] - virt_a[None, :, k])
                C *= _corr_1d(d, cfg.lengthscales[v_ofs], kind)
                v_ofs += 1
        else:
            g = next(gam)
            T = substitution_gram(f.dist, SubstitutionKernelParams(g, f.spec.beta))
            C *= T[np.ix_(cells_b, cells_a)]
    return C


def _encode_rows(model: GPModel, ds: MixedDataset, factors=None):
    """Map dataset rows onto each factor's cells/virtual features by label."""
    factors = model.factors if factors is None else factors
    names = tuple(c.name for c in model.schema if c.kind == "categorical")
    if ds.categorical_names != names or ds.continuous_names != tuple(
            c.name for c in model.schema if c.kind == "continuous"):
        raise DataError("dataset columns do not match the model schema")
    xs = model.standardizer.transform_x(ds.x)
    enc = []
    for f in factors:
        t = f.input_index
        if f.spec.partition is not None:
            base = f.table.partition.base_levels
            codes = _map_levels(ds.cat_levels[t], base, f.input_name)[ds.u[:, t]]
            cells = f.table.partition.cell_of(codes, xs[:, f.spec.partition[0]])
        else:
            cells = _map_levels(ds.cat_levels[t], f.table.levels, f.input_name)[ds.u[:, t]]
        virtual = f.payload_matrix()[cells] if f.is_virtual else None
        enc.append((cells, virtual))
    return xs, enc


def _map_levels(ds_levels, table_levels, input_name) -> np.ndarray:
    table_index = {lab: i for i, lab in enumerate(table_levels)}
    out = np.empty(len(ds_levels), dtype=np.int64)
    for i, lab in enumerate(ds_levels):
        if lab not in table_index:
            raise DataError(f"level {lab!r} of input {input_name!r} has no encoding payload "
                            "(unseen level without auxiliary data)")
        out[i] = table_index[lab]
    return out


def _extended_factors(model: GPModel, aux: MixedDataset) -> tuple[KernelFactor, ...]:
    """Frozen factors with unseen levels appended from auxiliary data.

    Payloads of training levels are never altered (the trained Gram must
    stay frozen); the auxiliary dataset only contributes payloads for levels
    the training data never saw.  Distance matrices are re-derived with the
    recorded direction seeds, so the training block is reproduced exactly.
    """
    aux_std = model.standardizer.transform(aux)
    out = []
    for f in model.factors:
        if f.spec.encoding != "distributional" or f.spec.partition is not None:
            out.append(f)
            continue
        aux_table = distributional_encoding(aux_std, _aux_input_index(aux_std, f.input_name),
                                            f.spec.outputs)
        new_levels = [lab for lab in aux_table.levels if lab not in f.table.levels]
        if not new_levels:
            out.append(f)
            continue
        keep = [aux_table.level_index(lab) for lab in new_levels]
        trimmed = EncodingTable(aux_table.input_index, aux_table.input_name, aux_table.kind,
                                tuple(new_levels), tuple(aux_table.payloads[i] for i in keep),
                                aux_table.counts[keep], aux_table.outputs)
        table = merge_auxiliary(f.table, trimmed, "replace")
        dist = level_distance_matrix(table, f.spec.metric, r=model.estimator["r"],
                                     n_quantiles=model.estimator["n_quantiles"],
                                     n_directions=model.estimator["n_directions"],
                                     seed=f.sw_seed or 0)
        out.append(KernelFactor(f.input_name, f.input_index, f.label, f.spec, table, dist,
                                f.sw_seed, f.train_cells, f.train_virtual, f.virtual_names))
    return tuple(out)


def assemble_gram(model: GPModel, ds_a: MixedDataset, ds_b: MixedDataset | None = None,
                  include_nugget: bool = False) -> np.ndarray:
    """Covariance block sigma^2 C(A, B) under the trained kernel.

    With ``ds_b`` omitted the symmetric Gram of ``ds_a`` is returned;
    ``include_nugget`` adds eta^2 I in that case.
    """
    xs_a, enc_a = _encode_rows(model, ds_a)
    if ds_b is None:
        K = model.config.sigma2 * _correlation(model, xs_a, enc_a, xs_a, enc_a)
        if include_nugget:
            K = K + model.config.eta2 * np.eye(ds_a.n)
        return K
    xs_b, enc_b = _encode_rows(model, ds_b)
    return model.config.sigma2 * _correlation(model, xs_a, enc_a, xs_b, enc_b)


def predict(model: GPModel, test: MixedDataset, include_noise: bool = False,
            aux: MixedDataset | None = None) -> Prediction:
    """Posterior mean and variance at the test rows, on the original scale.

    Unseen levels are an error unless ``aux`` supplies their payloads via
    :func:`_extended_factors`; ``include_noise`` adds eta^2 to the variance
    (observation prediction rather than latent-function prediction).
    """
    factors = model.factors if aux is None else _extended_factors(model, aux)
    xs, enc = _encode_rows(model, test, factors)
    cfg = model.config
    C = _correlation(model, xs, enc, factors=factors)
    k_star = cfg.sigma2 * C
    mean_std = k_star @ model.dual_weights
    w = solve_triangular(model.cholesky, k_star.T, lower=True)
    var_std = cfg.sigma2 - np.einsum("ij,ij->j", w, w)
    if include_noise:
        var_std = var_std + cfg.eta2
    floor = var_std.min()
    if floor < -1e-8:
        warnings.warn(f"predictive variance clipped at 0 (min {floor:.3e})", RuntimeWarning)
    var_std = np.clip(var_std, 0.0, None)

    sd = model.standardizer.y_sd[model.output]
    mu = model.standardizer.y_mean[model.output]
    return Prediction(mu + sd * mean_std, sd * sd * var_std)


def loo_residuals(model: GPModel, original_scale: bool = True):
    """Fast leave-one-out means and variances at fixed hyperparameters.

    Uses the closed-form identities loo_mean_i = y_i - [Ay]_i / A_ii and
    loo_var_i = 1 / A_ii with A = (K + eta^2 I)^{-1}; equivalent to
    refitting the dual weights without row i.
    """
    A = cho_solve((model.cholesky, True), np.eye(model.n))
    diag = np.diag(A)
    loo_mean = model.y_std - model.dual_weights / diag
    loo_var = 1.0 / diag
    if not original_scale:
        return loo_mean, loo_var
    sd = model.standardizer.y_sd[model.output]
    mu = model.standardizer.y_mean[model.output]
    return mu + sd * loo_mean, sd * sd * loo_var


def fit(train: MixedDataset, plan="w2", *, output: int = 0,
        continuous_kernel: str = "matern52", noise: bool = False, n_starts: int = 8,
        seed: int = 0, r: float = 2.0, n_quantiles: int = DEFAULT_QUANTILES,
        n_directions: int = DEFAULT_DIRECTIONS, aux: MixedDataset | None = None,
        aux_mode: str = "concat", optimize: bool = True, init_params: dict | None = None,
        nm_options: dict | None = None) -> GPModel:
    """Train a product-kernel GP on a mixed dataset.

    Parameters
    ----------
    train : MixedDataset
        Training data; outputs are standardized internally.
    plan : str or dict
        Encoding method per categorical input (see :func:`resolve_plan`).
    output : int
        Which numeric output column to regress on.
    continuous_kernel : {"matern52", "gaussian"}
    noise : bool
        Learn a relative nugget tau = eta^2/sigma^2 in [1e-8, 1]; otherwise
        tau is fixed at 1e-8 (deterministic-simulator mode).
    n_starts : int
        Multi-start count for the simplex search in log-parameter space.
    seed : int
        Drives start randomization and sliced-distance directions; fits are
        bit-reproducible for a fixed seed.
    r, n_quantiles, n_directions :
        Wasserstein/sliced estimator settings, frozen into the model.
    aux : MixedDataset, optional
        Auxiliary dataset pooled into the distributional encodings before
        training (mode ``concat`` or ``replace``).
    optimize : bool
        When False, keep ``init_params`` (or neutral defaults) untouched.
    init_params : dict, optional
        Starting values by name: feature names map to lengthscales, factor
        labels to gammas, and ``"tau"`` to the relative nugget.
    nm_options : dict, optional
        Overrides for the simplex optimizer (maxfev, xatol, fatol, ...).

    Returns
    -------
    GPModel
    """
    if continuous_kernel not in CONTINUOUS_KERNELS:
        raise ConfigError(f"unknown continuous kernel {continuous_kernel!r}")
    if train.n_outputs < 1:
        raise DataError("training data needs at least one numeric output")
    if not 0 <= output < train.n_outputs:
        raise DataError(f"output index {output} out of range")
    if aux_mode not in ("concat", "replace"):
        raise ConfigError(f"unknown aux_mode {aux_mode!r}")
    if n_starts < 1:
        raise ConfigError("n_starts must be >= 1")

    ds_std, std = _standardized(train)
    aux_std = None
    if aux is not None:
        if (aux.continuous_names != train.continuous_names
                or aux.categorical_names != train.categorical_names):
            raise DataError("auxiliary data must share the training input columns")
        aux_std = std.transform(aux)
    resolved = resolve_plan(train, plan, output)

    factors = []
    for t, name in enumerate(train.categorical_names):
        specs = resolved[name]
        for j, spec in enumerate(specs):
            suffix = "" if len(specs) == 1 else f"#{j}"
            factors.append(_build_factor(ds_std, t, j, suffix, spec, seed, r, n_quantiles,
                                         n_directions, aux_std, aux_mode))
    factors = tuple(factors)

    xs = ds_std.x
    y = ds_std.y[:, output].copy()
    n, p = xs.shape

    feature_names = list(train.continuous_names)
    cond_diffs = []
    iu, ju = np.triu_indices(n, 1)
    for s in range(p):
        cond_diffs.append(np.abs(xs[iu, s] - xs[ju, s]))
    for f in factors:
        if f.is_virtual:
            for k, vname in enumerate(f.virtual_names):
                cond_diffs.append(np.abs(f.train_virtual[iu, k] - f.train_virtual[ju, k]))
                feature_names.append(vname)
    metric_factors = [f for f in factors if not f.is_virtual]
    cond_expos = [substitution_exponent(f.dist, f.spec.beta)[f.train_cells[iu], f.train_cells[ju]]
                  for f in metric_factors]

    n_len = len(cond_diffs)
    n_gam = len(cond_expos)
    dim = n_len + n_gam + (1 if noise else 0)

    lo = np.full(dim, LOG_SCALE_BOUNDS[0])
    hi = np.full(dim, LOG_SCALE_BOUNDS[1])
    if noise:
        lo[-1], hi[-1] = LOG_TAU_BOUNDS

    is_matern = continuous_kernel == "matern52"

    def build_corr(theta):
        expo = np.zeros(iu.size)
        poly = np.ones(iu.size) if is_matern else None
        for d, log_ell in zip(cond_diffs, theta[:n_len]):
            if is_matern:
                z = d * (SQRT5 * math.exp(-log_ell))
                poly *= 1.0 + z + z * z / 3.0
                expo += z
            else:
                z = d * math.exp(-log_ell)
                expo += 0.5 * z * z
        for e, log_g in zip(cond_expos, theta[n_len:n_len + n_gam]):
            expo += math.exp(log_g) * e
        cvec = np.exp(-expo)
        if is_matern:
            cvec *= poly
        R = np.zeros((n, n))
        R[iu, ju] = cvec
        R += R.T
        tau = math.exp(theta[-1]) if noise else NOISELESS_TAU
        np.fill_diagonal(R, 1.0 + tau)
        return R, tau

    def objective(theta):
        R, _ = build_corr(theta)
        L, _ = _cholesky_with_jitter(R)
        if L is None:
            return np.inf
        alpha = cho_solve((L, True), y)
        q = float(y @ alpha)
        if q <= 0 or not np.isfinite(q):
            return np.inf
        return 0.5 * n * math.log(q / n) + float(np.log(np.diag(L)).sum()) \
            + 0.5 * n * (1.0 + LOG_2PI)

    theta0 = np.zeros(dim)
    if noise:
        theta0[-1] = math.log(1e-4)
    if init_params:
        _apply_init(theta0, init_params, feature_names,
                    [f.label for f in metric_factors], noise)
    theta0 = np.clip(theta0, lo, hi)

    start_objs = []
    t_start = time.perf_counter()
    if optimize and dim > 0:
        rng = np.random.default_rng(seed)
        starts = [theta0] + [rng.uniform(lo, hi) for _ in range(n_starts - 1)]
        options = {"maxfev": 200 * dim, "xatol": 1e-2, "fatol": 1e-2, "adaptive": dim > 2}
        if nm_options:
            options.update(nm_options)
        best_theta, best_val = None, np.inf
        for x0 in starts:
            f0 = objective(x0)
            start_objs.append(f0)
            if f0 < best_val:
                best_theta, best_val = x0, f0
            if not np.isfinite(f0):
                continue
            res = minimize(objective, x0, method="Nelder-Mead",
                           bounds=Bounds(lo, hi), options=options)
            if np.isfinite(res.fun) and res.fun < best_val:
                best_theta, best_val = np.clip(res.x, lo, hi), res.fun
        if best_theta is None or not np.isfinite(best_val):
            raise NumericalError("all optimizer starts failed the positive-definite check")
        theta, final_obj = best_theta, float(best_val)
    else:
        theta = theta0
        final_obj = float(objective(theta0))
        start_objs.append(final_obj)

    R, tau = build_corr(theta)
    L_corr, jitter = _cholesky_with_jitter(R)
    if L_corr is None:
        raise NumericalError("kernel matrix not positive definite after jitter escalation")
    alpha = cho_solve((L_corr, True), y)
    q = float(y @ alpha)
    if q <= 0 or not np.isfinite(q):
        raise NumericalError("degenerate profiled variance")
    sigma2 = q / n
    tau_eff = tau + jitter
    eta2 = tau_eff * sigma2
    loglik = -(0.5 * n * math.log(sigma2) + float(np.log(np.diag(L_corr)).sum())
               + 0.5 * n * (1.0 + LOG_2PI))

    lengthscales = np.exp(theta[:n_len])
    gammas = np.exp(theta[n_len:n_len + n_gam])
    config = KernelConfig(continuous_kernel, tuple(feature_names), lengthscales,
                          tuple(f.label for f in metric_factors),
                          tuple(f.spec.metric for f in metric_factors), gammas,
                          np.array([f.spec.beta for f in metric_factors]),
                          sigma2, eta2, tau_eff)

    model = GPModel(tuple(train.schema), train.cat_levels, output, std, factors, config,
                    xs, ds_std.u, y, math.sqrt(sigma2) * L_corr, alpha / sigma2,
                    loglik, noise, seed,
                    {"r": r, "n_quantiles": n_quantiles, "n_directions": n_directions},
                    {"start_objectives": start_objs, "jitter": jitter,
                     "n_starts": n_starts if optimize else 0,
                     "fit_seconds": time.perf_counter() - t_start,
                     "objective": final_obj})
    return model


def _standardized(train: MixedDataset):
    std = Standardizer.fit(train)
    return std.transform(train), std


def _apply_init(theta, init_params, feature_names, factor_labels, noise):
    known = {}
    for i, nm in enumerate(feature_names):
        known[nm] = i
    for j, nm in enumerate(factor_labels):
        known[nm] = len(feature_names) + j
    for key, val in init_params.items():
        if key == "tau":
            if not noise:
                continue
            theta[-1] = math.log(float(val))
        elif key in known:
            theta[known[key]] = math.log(float(val))
        else:
            raise ConfigError(f"unknown parameter name {key!r} in init_params")


def select_encoding_by_loo(train: MixedDataset, candidates, *, output: int = 0,
                           max_combos: int = 256, seed: int = 0, **fit_kwargs):
    """Pick the encoding combination with the best leave-one-out error.

    ``candidates`` is a list of method names applied to every categorical
    input, or a dict mapping input names to candidate lists.  Each
    combination is fitted with identical settings and scored by LOO
    mean-squared error on standardized outputs; the argmin wins, ties going
    to the first-listed combination.

    Returns
    -------
    (best_plan, scores) : dict mapping input name to method name, and a
        list of {"plan", "loo_mse", "loglik"} records in evaluation order.
    """
    names = train.categorical_names
    if not names:
        raise ConfigError("encoding selection needs at least one categorical input")
    if isinstance(candidates, dict):
        missing = set(names) - set(candidates)
        if missing:
            raise ConfigError(f"candidates missing for inputs {sorted(missing)}")
        per_input = [list(candidates[nm]) for nm in names]
    else:
        per_input = [list(candidates) for _ in names]
    if any(not c for c in per_input):
        raise ConfigError("every candidate list must be nonempty")
    total = math.prod(len(c) for c in per_input)
    if total > max_combos:
        raise ConfigError(f"{total} combinations exceed the budget of {max_combos}")

    best_plan, best_mse = None, np.inf
    scores = []
    for combo in itertools.product(*per_input):
        plan = dict(zip(names, combo))
        model = fit(train, plan, output=output, seed=seed, **fit_kwargs)
        loo_mean, _ = loo_residuals(model, original_scale=False)
        mse = float(np.mean((model.y_std - loo_mean) ** 2))
        scores.append({"plan": dict(plan), "loo_mse": mse, "loglik": model.loglik})
        if mse < best_mse:
            best_plan, best_mse = plan, mse
    return best_plan, scores


def _payload_to_json(payload):
    if isinstance(payload, EmpiricalDistribution):
        return {"type": "samples", "data": payload.samples.tolist()}
    if isinstance(payload, Histogram):
        return {"type": "freqs", "data": payload.freqs.tolist()}
    return {"type": "vector", "data": np.asarray(payload, dtype=float).tolist()}


def _payload_from_json(d):
    if d["type"] == "samples":
        return EmpiricalDistribution(np.asarray(d["data"], dtype=float))
    if d["type"] == "freqs":
        return Histogram(np.asarray(d["data"], dtype=float))
    return np.asarray(d["data"], dtype=float)


def _table_to_json(table: EncodingTable) -> dict:
    out = {"input_index": table.input_index, "input_name": table.input_name,
           "kind": table.kind, "levels": list(table.levels),
           "payloads": [_payload_to_json(p) for p in table.payloads],
           "counts": table.counts.tolist(), "outputs": list(table.outputs)}
    if table.partition is not None:
        part = table.partition
        out["partition"] = {"x_index": part.x_index, "x_name": part.x_name,
                            "edges": part.edges.tolist(),
                            "base_levels": list(part.base_levels),
                            "bin_to_cell": part.bin_to_cell.tolist()}
    return out


def _table_from_json(d: dict) -> EncodingTable:
    part = None
    if d.get("partition"):
        pd_ = d["partition"]
        part = Partition(pd_["x_index"], pd_["x_name"], np.asarray(pd_["edges"], dtype=float),
                         tuple(pd_["base_levels"]), np.asarray(pd_["bin_to_cell"], dtype=np.int64))
    return EncodingTable(d["input_index"], d["input_name"], d["kind"], tuple(d["levels"]),
                         tuple(_payload_from_json(p) for p in d["payloads"]),
                         np.asarray(d["counts"], dtype=np.int64), tuple(d["outputs"]), part)


def model_to_json(model: GPModel) -> dict:
    """Serialize a trained model to a JSON-compatible dict."""
    tri = model.cholesky[np.tril_indices(model.n)]
    return {
        "format": MODEL_FORMAT, "version": MODEL_VERSION,
        "schema": schema_to_json(model.schema),
        "cat_levels": [list(l) for l in model.cat_levels],
        "output": model.output,
        "noise": model.noise,
        "seed": model.seed,
        "estimator": dict(model.estimator),
        "standardizer": model.standardizer.to_dict(),
        "config": model.config.to_dict(),
        "factors": [{
            "input_name": f.input_name, "input_index": f.input_index, "label": f.label,
            "spec": f.spec.to_dict(), "table": _table_to_json(f.table),
            "dist": distance_matrix_to_json(f.dist) if f.dist is not None else None,
            "sw_seed": f.sw_seed,
        } for f in model.factors],
        "train": {"x_std": model.x_std.tolist(), "u": model.u.tolist(),
                  "y_std": model.y_std.tolist()},
        "cholesky_lower_row_major": tri.tolist(),
        "dual_weights": model.dual_weights.tolist(),
        "loglik": model.loglik,
    }


def model_from_json(payload: dict) -> GPModel:
    """Rebuild a model from :func:`model_to_json` output and verify it."""
    if payload.get("format") != MODEL_FORMAT:
        raise ConfigError("not a model file")
    if payload.get("version") != MODEL_VERSION:
        raise ConfigError(f"unsupported model version {payload.get('version')!r}")
    schema = tuple(ColumnSchema(c["name"], c["kind"],
                                tuple(c["levels"]) if c.get("levels") else None)
                   for c in payload["schema"])
    std = Standardizer.from_dict(payload["standardizer"])
    config = KernelConfig.from_dict(payload["config"])
    y_std = np.asarray(payload["train"]["y_std"], dtype=float)
    n = y_std.size
    x_std = np.asarray(payload["train"]["x_std"], dtype=float)
    if x_std.ndim == 1:  # degenerate p=0 round-trip
        x_std = x_std.reshape(n, 0)
    u = np.asarray(payload["train"]["u"], dtype=np.int64)
    if u.ndim == 1:
        u = u.reshape(n, 0)

    factors = []
    for fd in payload["factors"]:
        spec = FactorSpec.from_dict(fd["spec"])
        table = _table_from_json(fd["table"])
        dist = None
        if fd["dist"] is not None:
            dd = fd["dist"]
            dist = LevelDistanceMatrix(dd["metric"], tuple(dd["labels"]),
                                       np.asarray(dd["values"], dtype=float),
                                       dd.get("n_directions"), dd.get("seed"))
        t = fd["input_index"]
        if spec.partition is not None:
            cells = table.partition.cell_of(u[:, t], x_std[:, spec.partition[0]])
        else:
            cells = u[:, t]
        virtual = None
        vnames = ()
        if spec.metric is None:
            mat = np.vstack([np.asarray(p, dtype=float) for p in table.payloads])
            virtual = mat[cells]
            vnames = ((f"{fd['label']}.mean",) if spec.encoding == "mean"
                      else (f"{fd['label']}.mean", f"{fd['label']}.std"))
        factors.append(KernelFactor(fd["input_name"], t, fd["label"], spec, table, dist,
                                    fd["sw_seed"], cells, virtual, vnames))

    tri = np.asarray(payload["cholesky_lower_row_major"], dtype=float)
    chol = np.zeros((n, n))
    chol[np.tril_indices(n)] = tri
    model = GPModel(schema, tuple(tuple(l) for l in payload["cat_levels"]), payload["output"],
                    std, tuple(factors), config, x_std, u, y_std, chol,
                    np.asarray(payload["dual_weights"], dtype=float), payload["loglik"],
                    payload["noise"], payload["seed"], dict(payload["estimator"]))

    K = model.train_gram(include_nugget=True)
    scale = max(float(np.abs(K).max()), 1.0)
    if np.abs(chol @ chol.T - K).max() > 1e-8 * scale:
        raise DataError("stored Cholesky factor does not reproduce the kernel matrix")
    return model
