import math

import numpy as np
import pytest

from mixedgp.benchfns import (FUNCTIONS, BenchmarkConfig, _parse_method,
                              _replication_seeds, build_dataset,
                              eval_function, random_design, rrmse,
                              run_benchmark, sliced_design)
from mixedgp.errors import ConfigError, DataError


# ---------------------------------------------------------------------------
# scalar re-derivations of each response, written against the source displays
# rather than the vectorized implementation


def beam_scalar(L, h, I):
    return L ** 3 / (3.0e9 * h ** 4 * I)


def borehole_scalar(r, H_u, T_u, T_l, L, K_w, r_w, H_l, front, eps):
    lr = math.log(r / r_w)
    bracket = eps + 2.0 * L * T_u / (lr * r_w ** 2 * K_w) + T_u / T_l
    return front * T_u * (H_u - H_l) / (lr * bracket)


def otl_scalar(R_b1, R_b2, R_c1, R_c2, R_f, B):
    v_b1 = 12.0 * R_b2 / (R_b1 + R_b2)
    denom = B * (R_c2 + 9.0) + R_f
    return (B * (v_b1 + 0.74) * (R_c2 + 9.0) / denom
            + 11.35 * R_f / denom
            + 0.74 * B * R_f / R_c1)


def piston_scalar(R, S, V_0, T_a, T_0, P_0, k):
    A = (P_0 * R + 19.62 * R - k * V_0) / S
    V = S / (2.0 * k) * (A + math.sqrt(A ** 2 + 4.0 * k * P_0 * V_0 * T_0 / T_a))
    return 2.0 * math.pi * math.sqrt(R / (k + S ** 2 * P_0 * V_0 * T_a / (V ** 2 * T_0)))


def scalar_oracle(name, xrow, levels):
    if name == "beam":
        return [beam_scalar(*xrow, *levels)]
    if name in ("borehole", "borehole_lowfi", "borehole_multi"):
        hi = borehole_scalar(*xrow, *levels, front=2.0 * math.pi, eps=1e-3)
        lo = borehole_scalar(*xrow, *levels, front=10.0, eps=1.5e-3)
        return {"borehole": [hi], "borehole_lowfi": [lo],
                "borehole_multi": [hi, lo]}[name]
    if name == "otl":
        return [otl_scalar(*xrow, *levels)]
    if name == "piston":
        return [piston_scalar(*xrow, *levels)]
    raise AssertionError(name)


@pytest.mark.parametrize("name", sorted(FUNCTIONS))
def test_responses_match_scalar_oracle(name):
    spec = FUNCTIONS[name]
    design = random_design(spec, 1000, seed=42)
    got = eval_function(spec, design.x, design.u)
    assert got.shape == (1000, len(spec.outputs))
    level_values = [np.asarray(vals) for _, vals in spec.categorical]
    for i in range(0, 1000, 7):
        levels = [level_values[t][design.u[i, t]] for t in range(len(spec.categorical))]
        want = scalar_oracle(name, design.x[i], levels)
        np.testing.assert_allclose(got[i], want, rtol=1e-10)


def test_multi_output_columns_are_both_fidelities():
    spec = FUNCTIONS["borehole_multi"]
    design = random_design(spec, 200, seed=7)
    both = eval_function(spec, design.x, design.u)
    hifi = eval_function(FUNCTIONS["borehole"], design.x, design.u)
    lofi = eval_function(FUNCTIONS["borehole_lowfi"], design.x, design.u)
    np.testing.assert_array_equal(both[:, 0], hifi[:, 0])
    np.testing.assert_array_equal(both[:, 1], lofi[:, 0])


def test_registry_ranges_and_levels():
    beam = FUNCTIONS["beam"]
    assert beam.default_n == 90
    assert beam.categorical[0][1] == (0.0491, 0.0833, 0.0449, 0.0633, 0.0373, 0.0167)
    assert beam.n_level_combos == 6

    bh = FUNCTIONS["borehole"]
    assert bh.default_n == 180
    assert dict((nm, (lo, hi)) for nm, lo, hi in bh.continuous)["r"] == (100.0, 50000.0)
    assert bh.categorical[0][1] == (0.05, 0.10, 0.15)
    assert bh.categorical[1][1] == (700.0, 740.0, 780.0, 820.0)
    assert bh.n_level_combos == 12

    otl = FUNCTIONS["otl"]
    assert otl.default_n == 120
    assert otl.categorical[0][1] == (0.5, 1.2, 2.1, 2.9)
    assert len(otl.categorical[1][1]) == 6

    piston = FUNCTIONS["piston"]
    assert piston.default_n == 225
    assert piston.categorical[0][1] == (9000.0, 10000.0, 11000.0)
    assert piston.n_level_combos == 15

    assert FUNCTIONS["borehole_multi"].default_n == 24
    assert FUNCTIONS["borehole_multi"].outputs == ("y_hifi", "y_lofi")


def test_eval_function_validates_inputs():
    spec = FUNCTIONS["beam"]
    with pytest.raises(DataError, match="out of range"):
        eval_function(spec, [[9.0, 1.5]], [[0]])
    with pytest.raises(DataError, match="level code"):
        eval_function(spec, [[15.0, 1.5]], [[6]])
    with pytest.raises(DataError, match="shapes"):
        eval_function(spec, [[15.0]], [[0]])


# ---------------------------------------------------------------------------
# designs


def test_sliced_design_properties():
    spec = FUNCTIONS["beam"]
    ds = sliced_design(spec, 30, seed=3)  # 6 combos x 5 rows
    assert ds.n == 30
    codes = ds.u[:, 0]
    counts = np.bincount(codes, minlength=6)
    np.testing.assert_array_equal(counts, [5] * 6)
    lows = np.array([10.0, 1.0])
    highs = np.array([20.0, 2.0])
    for level in range(6):
        rows = ds.x[codes == level]
        unit = (rows - lows) / (highs - lows)
        # Latin property per slice: one point in each of the 5 equal strata
        for j in range(2):
            strata = np.floor(unit[:, j] * 5).astype(int)
            assert sorted(strata) == [0, 1, 2, 3, 4]
    assert np.all((ds.x >= lows) & (ds.x <= highs))


def test_sliced_design_covers_all_combos():
    spec = FUNCTIONS["otl"]  # 4 x 6 = 24 combos
    ds = sliced_design(spec, 48, seed=0)
    combos = set(map(tuple, ds.u))
    assert len(combos) == 24
    counts = np.bincount(ds.u[:, 0] * 6 + ds.u[:, 1], minlength=24)
    np.testing.assert_array_equal(counts, [2] * 24)


def test_sliced_design_rounds_up_with_warning():
    spec = FUNCTIONS["beam"]
    with pytest.warns(RuntimeWarning, match="rounded n up"):
        ds = sliced_design(spec, 20, seed=1)
    assert ds.n == 24  # next multiple of 6


def test_sliced_design_too_small():
    with pytest.raises(DataError, match="smaller than"):
        sliced_design(FUNCTIONS["beam"], 5, seed=0)


def test_random_design_ranges_and_determinism():
    spec = FUNCTIONS["piston"]
    a = random_design(spec, 500, seed=11)
    b = random_design(spec, 500, seed=11)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.u, b.u)
    for s, (_, lo, hi) in enumerate(spec.continuous):
        assert a.x[:, s].min() >= lo and a.x[:, s].max() <= hi
    for t, (_, values) in enumerate(spec.categorical):
        assert set(np.unique(a.u[:, t])) <= set(range(len(values)))
    c = random_design(spec, 500, seed=12)
    assert not np.array_equal(a.x, c.x)


def test_build_dataset_attaches_outputs():
    ds = build_dataset(FUNCTIONS["beam"], 12, seed=5)
    assert ds.n_outputs == 1
    np.testing.assert_array_equal(ds.y, eval_function(FUNCTIONS["beam"], ds.x, ds.u))
    assert ds.output_names == ("y",)
    with pytest.raises(ConfigError, match="design"):
        build_dataset(FUNCTIONS["beam"], 12, seed=5, design="grid")


# ---------------------------------------------------------------------------
# RRMSE


def test_rrmse_affine_invariance():
    rng = np.random.default_rng(8)
    truth = rng.normal(size=100)
    pred = truth + rng.normal(scale=0.3, size=100)
    base = rrmse(pred, truth)
    assert rrmse(2.5 * pred - 1.0, 2.5 * truth - 1.0) == pytest.approx(base, rel=1e-12)
    assert rrmse(-pred, -truth) == pytest.approx(base, rel=1e-12)


def test_rrmse_constant_mean_predictor_scores_one():
    rng = np.random.default_rng(9)
    truth = rng.normal(loc=3.0, scale=2.0, size=500)
    assert rrmse(np.full(500, truth.mean()), truth) == pytest.approx(1.0, abs=1e-12)
    assert rrmse(truth, truth) == 0.0


def test_rrmse_rejects_bad_inputs():
    with pytest.raises(DataError, match="constant truth"):
        rrmse([1.0, 2.0], [5.0, 5.0])
    with pytest.raises(DataError, match="length"):
        rrmse([1.0], [1.0, 2.0])


# ---------------------------------------------------------------------------
# harness


def test_replication_seeds_are_stable_and_distinct():
    a = _replication_seeds(123, 0)
    assert a == _replication_seeds(123, 0)
    assert len(a) == 4 and len(set(a)) == 4
    assert _replication_seeds(123, 1) != a
    assert _replication_seeds(124, 0) != a


def test_parse_method_suffixes():
    assert _parse_method("w2") == ("w2", None)
    assert _parse_method("w2+concat") == ("w2", "concat")
    assert _parse_method("mean_std+replace") == ("mean_std", "replace")
    assert _parse_method("replace") == ("replace", None)


def test_config_validation():
    with pytest.raises(ConfigError, match="unknown test function"):
        BenchmarkConfig("nope", ("mean",))
    with pytest.raises(ConfigError, match="at least one method"):
        BenchmarkConfig("beam", ())
    with pytest.raises(ConfigError, match="aux_function"):
        BenchmarkConfig("borehole", ("w2+concat",))
    with pytest.raises(ConfigError, match="unknown aux function"):
        BenchmarkConfig("borehole", ("w2+concat",), aux_function="nope", aux_n=10)
    with pytest.raises(ConfigError, match="jobs"):
        BenchmarkConfig("beam", ("mean",), jobs=0)
    cfg = BenchmarkConfig("borehole", ("w2+replace",), aux_function="borehole_lowfi", aux_n=24)
    assert cfg.aux_n == 24


def test_config_resolved_fills_default_n():
    cfg = BenchmarkConfig("otl", ("mean",))
    assert cfg.resolved()["n"] == 120
    assert BenchmarkConfig("otl", ("mean",), n=48).resolved()["n"] == 48


def small_run(**kw):
    cfg = BenchmarkConfig("beam", ("mean", "w2"), n=18, n_test=60,
                          replications=2, seed=99, n_starts=1, **kw)
    return run_benchmark(cfg)


def test_run_benchmark_records_and_aggregates():
    report = small_run()
    assert len(report.records) == 2 * 2  # reps x methods, single output
    assert report.n_failed == 0
    for rec in report.records:
        assert rec["output"] == "y"
        assert 0.0 <= rec["rrmse"] < 1.5
        assert rec["fit_seconds"] > 0
        assert rec["error"] is None
    agg = report.aggregates["w2:y"]
    assert agg["count"] == 2 and agg["failed"] == 0
    vals = [r["rrmse"] for r in report.records if r["method"] == "w2"]
    assert agg["median"] == pytest.approx(np.median(vals))


def test_run_benchmark_is_deterministic():
    a = small_run()
    b = small_run()
    assert a.records_csv() == b.records_csv()
    assert a.records == b.records or all(
        ra["rrmse"] == rb["rrmse"] for ra, rb in zip(a.records, b.records))


def test_records_csv_round_trips():
    report = small_run()
    lines = report.records_csv().strip().split("\n")
    assert lines[0] == "rep,seed,method,output,rrmse"
    assert len(lines) == 1 + len(report.records)
    for line, rec in zip(lines[1:], report.records):
        rep, seed, method, output, val = line.split(",")
        assert (int(rep), method, output) == (rec["rep"], rec["method"], rec["output"])
        assert float(val) == rec["rrmse"]  # .17g preserves the double exactly


def test_run_benchmark_records_failures():
    # histogram methods need a label output, which beam lacks: the fit fails
    # per replication and the report carries the error instead of raising
    cfg = BenchmarkConfig("beam", ("hist_chi2",), n=12, n_test=20,
                          replications=2, seed=1, n_starts=1)
    report = run_benchmark(cfg)
    assert report.n_failed == 2
    for rec in report.records:
        assert rec["rrmse"] is None
        assert "ConfigError" in rec["error"]
    agg = report.aggregates["hist_chi2:y"]
    assert agg["count"] == 0 and agg["failed"] == 2 and agg["median"] is None
    assert ",y," in report.records_csv() and report.records_csv().rstrip().endswith(",")
