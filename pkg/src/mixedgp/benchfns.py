"""Engineering test functions, designs, RRMSE, and the replication harness.

The four mixed-input test cases (beam bending, borehole, OTL circuit,
piston) are implemented exactly as displayed in their source formulations,
with the qualitative inputs and ranges of the standard input table.  A
low-fidelity borehole variant (10 for 2*pi, 1.5e-3 for 1e-3) supports the
multi-output and auxiliary-data experiments.

Training designs are sliced Latin hypercubes: one independent Latin
hypercube per level combination, every combination receiving the same row
count.  Test sets are uniform Monte-Carlo draws.  The harness repeats
(design, fit, predict, RRMSE) over replications with per-replication seeds
derived from the master seed by a fixed splitting rule, so results do not
depend on scheduling.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .data import ColumnSchema, MixedDataset
from .errors import ConfigError, DataError, MixedGPError
from .gp import fit as gp_fit
from .gp import predict as gp_predict

DEFAULT_TEST_SIZE = 3000
DEFAULT_REPLICATIONS = 50


@dataclass(frozen=True)
class TestFunctionSpec:
    """Input ranges, level values and output names of one test function."""

    name: str
    continuous: tuple  # of (name, low, high)
    categorical: tuple  # of (name, (value, ...))
    outputs: tuple
    default_n: int

    @property
    def n_continuous(self) -> int:
        return len(self.continuous)

    @property
    def n_level_combos(self) -> int:
        combos = 1
        for _, values in self.categorical:
            combos *= len(values)
        return combos

    def level_labels(self, t: int) -> tuple:
        return tuple(format(v, "g") for v in self.categorical[t][1])

    def schema(self) -> tuple:
        cols = [ColumnSchema(nm, "continuous") for nm, _, _ in self.continuous]
        cols += [ColumnSchema(nm, "categorical", self.level_labels(t))
                 for t, (nm, _) in enumerate(self.categorical)]
        cols += [ColumnSchema(nm, "output") for nm in self.outputs]
        return tuple(cols)


_BEAM = TestFunctionSpec(
    "beam",
    (("L", 10.0, 20.0), ("h", 1.0, 2.0)),
    (("I", (0.0491, 0.0833, 0.0449, 0.0633, 0.0373, 0.0167)),),
    ("y",), 90)

_BOREHOLE_INPUTS = (
    ("r", 100.0, 50000.0), ("H_u", 990.0, 1110.0), ("T_u", 63.07, 115.6),
    ("T_l", 63.1, 116.0), ("L", 1120.0, 1680.0), ("K_w", 9855.0, 12045.0))
_BOREHOLE_CATS = (("r_w", (0.05, 0.10, 0.15)), ("H_l", (700.0, 740.0, 780.0, 820.0)))

_BOREHOLE = TestFunctionSpec("borehole", _BOREHOLE_INPUTS, _BOREHOLE_CATS, ("y",), 180)
_BOREHOLE_LOWFI = TestFunctionSpec("borehole_lowfi", _BOREHOLE_INPUTS, _BOREHOLE_CATS, ("y",), 180)
_BOREHOLE_MULTI = TestFunctionSpec("borehole_multi", _BOREHOLE_INPUTS, _BOREHOLE_CATS,
                                   ("y_hifi", "y_lofi"), 24)

_OTL = TestFunctionSpec(
    "otl",
    (("R_b1", 50.0, 150.0), ("R_b2", 25.0, 70.0), ("R_c1", 1.2, 2.5), ("R_c2", 0.25, 1.20)),
    (("R_f", (0.5, 1.2, 2.1, 2.9)), ("B", (50.0, 100.0, 150.0, 200.0, 250.0, 300.0))),
    ("y",), 120)

_PISTON = TestFunctionSpec(
    "piston",
    (("R", 30.0, 60.0), ("S", 0.005, 0.020), ("V_0", 0.002, 0.010),
     ("T_a", 290.0, 296.0), ("T_0", 340.0, 360.0)),
    (("P_0", (9000.0, 10000.0, 11000.0)), ("k", (1000.0, 2000.0, 3000.0, 4000.0, 5000.0))),
    ("y",), 225)

FUNCTIONS = {s.name: s for s in (_BEAM, _BOREHOLE, _BOREHOLE_LOWFI, _BOREHOLE_MULTI, _OTL, _PISTON)}


def _beam(v):
    return v["L"] ** 3 / (3e9 * v["h"] ** 4 * v["I"])


def _borehole_family(v, front, offset):
    log_ratio = np.log(v["r"] / v["r_w"])
    denom = log_ratio * (offset + 2.0 * v["L"] * v["T_u"] / (log_ratio * v["r_w"] ** 2 * v["K_w"])
                         + v["T_u"] / v["T_l"])
    return front * v["T_u"] * (v["H_u"] - v["H_l"]) / denom


def _otl(v):
    v_b1 = 12.0 * v["R_b2"] / (v["R_b1"] + v["R_b2"])
    common = v["B"] * (v["R_c2"] + 9.0) + v["R_f"]
    return (v["B"] * (v_b1 + 0.74) * (v["R_c2"] + 9.0) / common
            + 11.35 * v["R_f"] / common
            + 0.74 * v["B"] * v["R_f"] / v["R_c1"])


def _piston(v):
    a = (v["P_0"] * v["R"] + 19.62 * v["R"] - v["k"] * v["V_0"]) / v["S"]
    vol = v["S"] / (2.0 * v["k"]) * (a + np.sqrt(a ** 2 + 4.0 * v["k"] * v["P_0"] * v["V_0"]
                                                 * v["T_0"] / v["T_a"]))
    return 2.0 * np.pi * np.sqrt(v["R"] / (v["k"] + v["S"] ** 2 * v["P_0"] * v["V_0"] * v["T_a"]
                                           / (vol ** 2 * v["T_0"])))


def eval_function(spec: TestFunctionSpec, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Evaluate a test function on raw continuous values and level codes.

    Returns an (n, d) output block.  Inputs outside the declared ranges or
    level sets are an error.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=np.int64))
    if x.shape[1] != spec.n_continuous or u.shape[1] != len(spec.categorical):
        raise DataError(
            f"{spec.name}: input block shapes ({x.shape[1]} continuous, {u.shape[1]} "
            f"categorical) do not match the declared {spec.n_continuous} and "
            f"{len(spec.categorical)}"
        )
    values = {}
    for s, (nm, lo, hi) in enumerate(spec.continuous):
        col = x[:, s]
        if np.any((col < lo) | (col > hi)):
            raise DataError(f"{spec.name}: input {nm!r} out of range [{lo}, {hi}]")
        values[nm] = col
    for t, (nm, levels) in enumerate(spec.categorical):
        codes = u[:, t]
        if np.any((codes < 0) | (codes >= len(levels))):
            raise DataError(f"{spec.name}: level code out of range for {nm!r}")
        values[nm] = np.asarray(levels, dtype=float)[codes]

    if spec.name == "beam":
        cols = [_beam(values)]
    elif spec.name == "borehole":
        cols = [_borehole_family(values, 2.0 * np.pi, 1e-3)]
    elif spec.name == "borehole_lowfi":
        cols = [_borehole_family(values, 10.0, 1.5e-3)]
    elif spec.name == "borehole_multi":
        cols = [_borehole_family(values, 2.0 * np.pi, 1e-3),
                _borehole_family(values, 10.0, 1.5e-3)]
    elif spec.name == "otl":
        cols = [_otl(values)]
    elif spec.name == "piston":
        cols = [_piston(values)]
    else:
        raise ConfigError(f"unknown test function {spec.name!r}")
    return np.column_stack(cols)


def _latin_hypercube(rng: np.random.Generator, n: int, dims: int) -> np.ndarray:
    """n points in [0,1]^dims with one point per 1/n-probability stratum per dim."""
    sample = np.empty((n, dims))
    for j in range(dims):
        sample[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n
    return sample


def sliced_design(spec: TestFunctionSpec, n: int, seed: int) -> MixedDataset:
    """Sliced Latin hypercube design: one LH slice per level combination.

    ``n`` must be at least the number of level combinations; when it is not
    a multiple, it is rounded up with a warning so every combination keeps
    an equal share.  Returns an inputs-only dataset (no output columns).
    """
    combos = spec.n_level_combos
    if n < combos:
        raise DataError(f"{spec.name}: n={n} is smaller than {combos} level combinations")
    if n % combos:
        n = combos * (n // combos + 1)
        warnings.warn(f"{spec.name}: rounded n up to {n} for equal slices", RuntimeWarning)
    per = n // combos
    rng = np.random.default_rng(seed)
    lows = np.array([lo for _, lo, hi in spec.continuous])
    highs = np.array([hi for _, lo, hi in spec.continuous])
    sizes = [len(values) for _, values in spec.categorical]
    x_parts, u_parts = [], []
    for combo_idx in range(combos):
        codes, rem = [], combo_idx
        for size in reversed(sizes):
            codes.append(rem % size)
            rem //= size
        codes = codes[::-1]
        unit = _latin_hypercube(rng, per, spec.n_continuous)
        x_parts.append(lows + unit * (highs - lows))
        u_parts.append(np.tile(codes, (per, 1)))
    schema = tuple(c for c in spec.schema() if c.kind != "output")
    return MixedDataset(schema, np.vstack(x_parts),
                        np.vstack(u_parts) if sizes else np.zeros((n, 0), dtype=np.int64),
                        np.zeros((n, 0)), None,
                        tuple(spec.level_labels(t) for t in range(len(spec.categorical))), ())


def random_design(spec: TestFunctionSpec, n: int, seed: int) -> MixedDataset:
    """Uniform Monte-Carlo design over ranges with uniform level assignment."""
    if n < 1:
        raise DataError("need at least one row")
    rng = np.random.default_rng(seed)
    lows = np.array([lo for _, lo, hi in spec.continuous])
    highs = np.array([hi for _, lo, hi in spec.continuous])
    x = lows + rng.uniform(size=(n, spec.n_continuous)) * (highs - lows)
    u = np.column_stack([rng.integers(0, len(values), size=n)
                         for _, values in spec.categorical]) if spec.categorical \
        else np.zeros((n, 0), dtype=np.int64)
    schema = tuple(c for c in spec.schema() if c.kind != "output")
    return MixedDataset(schema, x, u, np.zeros((n, 0)), None,
                        tuple(spec.level_labels(t) for t in range(len(spec.categorical))), ())


def evaluate_design(spec: TestFunctionSpec, design: MixedDataset) -> MixedDataset:
    """Attach the function outputs to an inputs-only design."""
    y = eval_function(spec, design.x, design.u)
    return MixedDataset(spec.schema(), design.x, design.u, y, None,
                        design.cat_levels, ())


def build_dataset(spec: TestFunctionSpec, n: int, seed: int, design: str = "sliced") -> MixedDataset:
    """Design + evaluate in one step (``design`` is "sliced" or "random")."""
    if design == "sliced":
        return evaluate_design(spec, sliced_design(spec, n, seed))
    if design == "random":
        return evaluate_design(spec, random_design(spec, n, seed))
    raise ConfigError(f"unknown design type {design!r}")


def rrmse(pred, truth) -> float:
    """Root mean squared error over the population std of the truth.

    Predicting the constant mean of the truth scores exactly 1; the measure
    is invariant under common affine maps of both arguments.
    """
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.size != truth.size or pred.size == 0:
        raise DataError("pred and truth must share a nonzero length")
    sd = truth.std()
    if sd == 0:
        raise DataError("constant truth; RRMSE undefined")
    return float(np.sqrt(np.mean((pred - truth) ** 2)) / sd)


@dataclass(frozen=True)
class BenchmarkConfig:
    """Settings of one benchmark run.

    ``methods`` are encoding-plan names, optionally suffixed with
    ``+concat``/``+replace`` to pool auxiliary data into the encodings
    (requires ``aux_function``/``aux_n``).  Every replication derives its
    seeds from ``seed`` by a fixed rule, so reports are reproducible and
    independent of ``jobs``.
    """

    function: str
    methods: tuple
    n: int | None = None
    n_test: int = DEFAULT_TEST_SIZE
    replications: int = DEFAULT_REPLICATIONS
    seed: int = 0
    noise: bool = False
    n_starts: int = 8
    continuous_kernel: str = "matern52"
    n_quantiles: int = 100
    n_directions: int = 100
    aux_function: str | None = None
    aux_n: int = 0
    jobs: int = 1
    nm_options: dict | None = None

    def __post_init__(self):
        if self.function not in FUNCTIONS:
            raise ConfigError(f"unknown test function {self.function!r}; "
                              f"choose from {sorted(FUNCTIONS)}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.replications < 1 or self.n_test < 1:
            raise ConfigError("replications and n_test must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for m in self.methods:
            _, mode = _parse_method(m)
            if mode is not None and (self.aux_function is None or self.aux_n < 1):
                raise ConfigError(f"method {m!r} needs aux_function and aux_n")
        if self.aux_function is not None and self.aux_function not in FUNCTIONS:
            raise ConfigError(f"unknown aux function {self.aux_function!r}")

    def resolved(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        out["n"] = self.n if self.n is not None else FUNCTIONS[self.function].default_n
        out["rrmse_normalizer"] = "population std of test outputs"
        return out


def _parse_method(method: str):
    for mode in ("concat", "replace"):
        if method.endswith("+" + mode):
            return method[: -(len(mode) + 1)], mode
    return method, None


@dataclass(frozen=True)
class BenchmarkReport:
    """Per-replication records plus per-(method, output) aggregates."""

    config: dict
    records: tuple
    aggregates: dict

    def to_json(self) -> dict:
        return {"config": self.config, "records": list(self.records),
                "aggregates": self.aggregates}

    def records_csv(self) -> str:
        """Deterministic CSV of the replication records (no wall times)."""
        lines = ["rep,seed,method,output,rrmse"]
        for rec in self.records:
            val = "" if rec["rrmse"] is None else format(rec["rrmse"], ".17g")
            lines.append(f"{rec['rep']},{rec['seed']},{rec['method']},{rec['output']},{val}")
        return "\n".join(lines) + "\n"

    @property
    def n_failed(self) -> int:
        return sum(1 for rec in self.records if rec["error"] is not None)


def _replication_seeds(master_seed: int, rep: int) -> tuple:
    state = np.random.SeedSequence([master_seed, rep]).generate_state(4)
    return tuple(int(s) for s in state)


def _run_replication(config: BenchmarkConfig, rep: int) -> list:
    spec = FUNCTIONS[config.function]
    n = config.n if config.n is not None else spec.default_n
    train_seed, test_seed, aux_seed, fit_seed = _replication_seeds(config.seed, rep)
    train = build_dataset(spec, n, train_seed)
    test = build_dataset(spec, config.n_test, test_seed, design="random")
    aux_ds = None
    if config.aux_function is not None and config.aux_n > 0:
        aux_ds = build_dataset(FUNCTIONS[config.aux_function], config.aux_n, aux_seed)
    records = []
    for method in config.methods:
        base, mode = _parse_method(method)
        for k, out_name in enumerate(spec.outputs):
            rec = {"rep": rep, "seed": train_seed, "method": method, "output": out_name,
                   "rrmse": None, "fit_seconds": None, "error": None}
            t0 = time.perf_counter()
            try:
                model = gp_fit(train, base, output=k, noise=config.noise,
                               n_starts=config.n_starts, seed=fit_seed,
                               continuous_kernel=config.continuous_kernel,
                               n_quantiles=config.n_quantiles,
                               n_directions=config.n_directions,
                               aux=aux_ds if mode is not None else None,
                               aux_mode=mode or "concat",
                               nm_options=config.nm_options)
                pred = gp_predict(model, test)
                rec["rrmse"] = rrmse(pred.mean, test.y[:, k])
            except (MixedGPError, np.linalg.LinAlgError) as exc:
                rec["error"] = f"{type(exc).__name__}: {exc}"
            rec["fit_seconds"] = time.perf_counter() - t0
            records.append(rec)
    return records


def run_benchmark(config: BenchmarkConfig) -> BenchmarkReport:
    """Run the full replication loop and aggregate RRMSE per method/output.

    Fit failures are recorded (``error`` field, empty RRMSE), never raised.
    With ``jobs > 1`` replications run in separate processes; the records
    and their order are identical either way.
    """
    reps = range(config.replications)
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            chunks = list(pool.map(_run_replication, [config] * config.replications, reps))
    else:
        chunks = [_run_replication(config, rep) for rep in reps]
    records = tuple(rec for chunk in chunks for rec in chunk)

    aggregates = {}
    spec = FUNCTIONS[config.function]
    for method in config.methods:
        for out_name in spec.outputs:
            vals = np.array([rec["rrmse"] for rec in records
                             if rec["method"] == method and rec["output"] == out_name
                             and rec["rrmse"] is not None])
            failed = sum(1 for rec in records if rec["method"] == method
                         and rec["output"] == out_name and rec["error"] is not None)
            key = f"{method}:{out_name}"
            if vals.size:
                aggregates[key] = {"median": float(np.median(vals)),
                                   "mean": float(vals.mean()),
                                   "std": float(vals.std()),
                                   "count": int(vals.size), "failed": failed}
            else:
                aggregates[key] = {"median": None, "mean": None, "std": None,
                                   "count": 0, "failed": failed}
    return BenchmarkReport(config.resolved(), records, aggregates)
