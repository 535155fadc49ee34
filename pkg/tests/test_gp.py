import json

import numpy as np
import pytest

from mixedgp.data import ColumnSchema, MixedDataset
from mixedgp.distances import wasserstein_1d
from mixedgp.errors import ConfigError, DataError
from mixedgp.gp import (FactorSpec, GPModel, log_marginal_likelihood, loo_residuals,
                        matern52, gaussian_kernel, method_factors, model_from_json,
                        model_to_json, predict, resolve_plan, select_encoding_by_loo)
from mixedgp.gp import fit as gp_fit

from conftest import make_dataset


def toy_dataset(n=24, seed=0, n_levels=3, scale=1.0, shift=0.0):
    """Smooth mixed-input response with a level-dependent offset."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 2))
    u = rng.integers(0, n_levels, size=(n, 1))
    offs = np.linspace(-2.0, 2.0, n_levels)[u[:, 0]]
    y = np.sin(2.0 * x[:, 0]) + 0.5 * x[:, 1] ** 2 + offs
    y = scale * y + shift
    levels = tuple(f"l{k}" for k in range(n_levels))
    return make_dataset(x, u, y[:, None], cat_levels=(levels,))


# ---------------------------------------------------------------------------
# kernels and likelihood primitives


def test_matern52_values():
    assert matern52(np.array(0.0), 1.0) == 1.0
    z = np.sqrt(5.0)
    want = (1.0 + z + z * z / 3.0) * np.exp(-z)
    assert matern52(np.array(1.0), 1.0) == pytest.approx(want, abs=1e-15)
    # lengthscale only enters through d / ell
    assert matern52(np.array(3.0), 3.0) == pytest.approx(want, abs=1e-15)


def test_gaussian_kernel_values():
    assert gaussian_kernel(np.array(0.0), 2.0) == 1.0
    assert gaussian_kernel(np.array(2.0), 2.0) == pytest.approx(np.exp(-0.5), abs=1e-15)


def test_log_marginal_likelihood_dense_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        n = int(rng.integers(3, 50))
        A = rng.normal(size=(n, n))
        gram = A @ A.T + n * np.eye(n)
        y = rng.normal(size=n)
        eta2 = float(rng.uniform(0.0, 0.5))
        K = gram + eta2 * np.eye(n)
        sign, logdet = np.linalg.slogdet(K)
        assert sign > 0
        want = -0.5 * y @ np.linalg.inv(K) @ y - 0.5 * logdet - 0.5 * n * np.log(2.0 * np.pi)
        got = log_marginal_likelihood(gram, y, eta2)
        assert got == pytest.approx(want, abs=1e-8)


# ---------------------------------------------------------------------------
# plans


def test_method_factors_expansion():
    assert method_factors("w2", 1, 0)[0].metric == "w2"
    assert method_factors("mmd", 1, 0)[0].metric == "mmd2"
    multi = method_factors("multi_1d_mmd", 2, 0)
    assert len(multi) == 2 and multi[0].outputs == (0,) and multi[1].outputs == (1,)
    two_d = method_factors("2d_sw2", 2, 0)
    assert len(two_d) == 1 and two_d[0].outputs == (0, 1)
    with pytest.raises(ConfigError):
        method_factors("hist_chi2", 1, 0)  # no label output available
    with pytest.raises(ConfigError):
        method_factors("nope", 1, 0)


def test_factor_spec_validation():
    with pytest.raises(ConfigError):
        FactorSpec("mean", "w2")
    with pytest.raises(ConfigError):
        FactorSpec("distributional", "w2", (0, 1))
    with pytest.raises(ConfigError):
        FactorSpec("distributional", "tv", (0,))
    with pytest.raises(ConfigError):
        FactorSpec("distributional", "w2", (0,), beta=2.5)
    onehot = FactorSpec("onehot")
    assert onehot.metric == "euclid2" and onehot.outputs == ()
    auto = FactorSpec("distributional", None, (0, 1))
    assert auto.metric == "sw2"


def test_resolve_plan_coverage(demo):
    plan = resolve_plan(demo, "w2")
    assert set(plan) == {"U1"}
    with pytest.raises(ConfigError):
        resolve_plan(demo, {"U9": "w2"})
    with pytest.raises(ConfigError):
        resolve_plan(demo, {})


# ---------------------------------------------------------------------------
# fitting and prediction


def test_noiseless_fit_interpolates(demo):
    model = gp_fit(demo, "w2", seed=0)
    pred = predict(model, demo)
    np.testing.assert_allclose(pred.mean, demo.y[:, 0], atol=1e-4)
    assert pred.variance.max() < 1e-4


def test_train_gram_matches_scalar_oracle():
    ds = toy_dataset(n=15, seed=2)
    model = gp_fit(ds, "w2", seed=0, n_starts=2)
    cfg = model.config
    factor = model.factors[0]
    table = factor.table
    K = model.train_gram(include_nugget=False)
    xs = model.x_std
    cells = factor.train_cells
    rng = np.random.default_rng(3)
    for _ in range(25):
        i, j = rng.integers(0, ds.n, size=2)
        val = cfg.sigma2
        for s in range(2):
            z = np.sqrt(5.0) * abs(xs[i, s] - xs[j, s]) / cfg.lengthscales[s]
            val *= (1.0 + z + z * z / 3.0) * np.exp(-z)
        w = wasserstein_1d(table.payloads[cells[i]].samples[:, 0],
                           table.payloads[cells[j]].samples[:, 0], r=2.0)
        val *= np.exp(-cfg.gammas[0] * w ** cfg.betas[0])
        assert K[i, j] == pytest.approx(val, rel=1e-10)


def test_loo_matches_refit_oracle():
    ds = toy_dataset(n=20, seed=4)
    model = gp_fit(ds, "w2", seed=0, n_starts=2, noise=True)
    K = model.train_gram(include_nugget=True)
    y = model.y_std
    loo_mean, loo_var = loo_residuals(model, original_scale=False)
    for i in range(ds.n):
        mask = np.arange(ds.n) != i
        Km = K[np.ix_(mask, mask)]
        km = K[mask, i]
        sol = np.linalg.solve(Km, np.column_stack([y[mask], km]))
        want_mean = km @ sol[:, 0]
        want_var = K[i, i] - km @ sol[:, 1]
        assert loo_mean[i] == pytest.approx(want_mean, rel=1e-6, abs=1e-9)
        assert loo_var[i] == pytest.approx(want_var, rel=1e-6)


def test_fit_is_deterministic():
    ds = toy_dataset(n=18, seed=5)
    m1 = gp_fit(ds, "w2", seed=7, n_starts=3)
    m2 = gp_fit(ds, "w2", seed=7, n_starts=3)
    assert m1.loglik == m2.loglik
    np.testing.assert_array_equal(m1.config.lengthscales, m2.config.lengthscales)
    np.testing.assert_array_equal(m1.config.gammas, m2.config.gammas)
    test = toy_dataset(n=30, seed=6)
    np.testing.assert_array_equal(predict(m1, test).mean, predict(m2, test).mean)


def test_affine_equivariance():
    a, b = 2.0, 3.0
    base = toy_dataset(n=22, seed=8)
    scaled = toy_dataset(n=22, seed=8, scale=a, shift=b)
    test = toy_dataset(n=40, seed=9)
    test_scaled = toy_dataset(n=40, seed=9, scale=a, shift=b)
    m1 = gp_fit(base, "w2", seed=0, n_starts=2)
    m2 = gp_fit(scaled, "w2", seed=0, n_starts=2)
    p1 = predict(m1, test)
    p2 = predict(m2, test_scaled)
    np.testing.assert_allclose(p2.mean, a * p1.mean + b, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(p2.variance, a * a * p1.variance, rtol=1e-10, atol=1e-12)


def test_gaussian_kernel_option():
    ds = toy_dataset(n=16, seed=10)
    model = gp_fit(ds, "mean", continuous_kernel="gaussian", seed=0, n_starts=2)
    pred = predict(model, ds)
    np.testing.assert_allclose(pred.mean, ds.y[:, 0], atol=1e-3)


def test_virtual_mean_std_features():
    ds = toy_dataset(n=20, seed=11)
    model = gp_fit(ds, "mean_std", seed=0, n_starts=2)
    cfg = model.config
    # two virtual features (level mean, level std) extend the lengthscales
    assert len(cfg.feature_names) == 2 + 2
    assert cfg.feature_names[2].endswith(".mean")
    assert cfg.feature_names[3].endswith(".std")
    assert cfg.factor_labels == ()
    assert model.factors[0].is_virtual


def test_noise_fit_learns_nugget():
    rng = np.random.default_rng(12)
    ds = toy_dataset(n=60, seed=13)
    noisy = make_dataset(ds.x, ds.u, ds.y + rng.normal(0.0, 0.3, size=ds.y.shape),
                         cat_levels=ds.cat_levels)
    model = gp_fit(noisy, "w2", seed=0, noise=True, n_starts=4)
    assert model.config.eta2 > 1e-4
    pred_latent = predict(model, noisy)
    pred_obs = predict(model, noisy, include_noise=True)
    sd = model.standardizer.y_sd[0]
    np.testing.assert_allclose(pred_obs.variance - pred_latent.variance,
                               model.config.eta2 * sd * sd, rtol=1e-8)


def test_multi_factor_labels():
    rng = np.random.default_rng(14)
    n = 20
    x = rng.uniform(size=(n, 1))
    u = rng.integers(0, 2, size=(n, 1))
    y = np.column_stack([np.sin(x[:, 0]) + u[:, 0], np.cos(x[:, 0]) - u[:, 0]])
    ds = make_dataset(x, u, y, cat_levels=(("a", "b"),))
    model = gp_fit(ds, "multi_1d_mmd", output=0, seed=0, n_starts=2)
    assert len(model.config.factor_labels) == 2
    assert len(set(model.config.factor_labels)) == 2
    assert model.config.metrics == ("mmd2", "mmd2")


def test_histogram_factor_fit():
    rng = np.random.default_rng(15)
    n = 30
    x = rng.uniform(size=(n, 1))
    u = rng.integers(0, 3, size=(n, 1))
    labels = rng.integers(0, 2, size=(n, 1))
    y = x[:, 0] + np.array([0.0, 1.0, 4.0])[u[:, 0]]
    schema = (ColumnSchema("x0", "continuous"),
              ColumnSchema("u0", "categorical", ("a", "b", "c")),
              ColumnSchema("y", "output"),
              ColumnSchema("cls", "output", ("no", "yes")))
    ds = MixedDataset(schema, x, u, y[:, None], labels, (("a", "b", "c"),),
                      (("no", "yes"),))
    model = gp_fit(ds, "hist_chi2", seed=0, n_starts=2)
    assert model.config.metrics == ("chi2",)
    pred = predict(model, ds)
    assert np.isfinite(pred.mean).all()


def test_partitioned_factor_fit_and_predict():
    rng = np.random.default_rng(16)
    n = 200
    x = rng.uniform(-1.0, 1.0, size=(n, 1))
    u = rng.integers(0, 2, size=(n, 1))
    y = np.where(u[:, 0] == 0, x[:, 0], -x[:, 0])
    ds = make_dataset(x, u, y[:, None], cat_levels=(("a", "b"),))
    plan = {"u0": FactorSpec("distributional", "w2", (0,), partition=(0, 4))}
    model = gp_fit(ds, plan, seed=0, n_starts=2)
    test_rows = ds.subset(range(150, 200))
    pred = predict(model, test_rows)
    assert np.sqrt(np.mean((pred.mean - test_rows.y[:, 0]) ** 2)) < 0.05


def test_unseen_level_requires_aux():
    ds = toy_dataset(n=20, seed=17, n_levels=2)
    model = gp_fit(ds, "w2", seed=0, n_starts=2)
    test = make_dataset(ds.x[:3], np.full((3, 1), 2, dtype=np.int64), ds.y[:3],
                        cat_levels=(("l0", "l1", "l2"),))
    with pytest.raises(DataError, match="l2"):
        predict(model, test)
    aux = make_dataset(ds.x[:5], np.full((5, 1), 0, dtype=np.int64),
                       ds.y[:5] + 1.0, cat_levels=(("l2",),))
    pred = predict(model, test, aux=aux)
    assert np.isfinite(pred.mean).all()


def test_aux_does_not_move_seen_levels():
    ds = toy_dataset(n=20, seed=18, n_levels=2)
    model = gp_fit(ds, "w2", seed=0, n_starts=2)
    test = ds.subset(range(10))
    aux = make_dataset(ds.x[:5], np.full((5, 1), 0, dtype=np.int64),
                       ds.y[:5] * 3.0, cat_levels=(("l0",),))
    base = predict(model, test)
    with_aux = predict(model, test, aux=aux)
    # the training Gram is frozen: auxiliary payloads only serve unseen levels
    np.testing.assert_array_equal(with_aux.mean, base.mean)
    np.testing.assert_array_equal(with_aux.variance, base.variance)


def test_fit_time_aux_changes_encodings():
    ds = toy_dataset(n=20, seed=19, n_levels=2)
    aux = make_dataset(ds.x, ds.u, ds.y + 0.5, cat_levels=ds.cat_levels)
    plain = gp_fit(ds, "w2", seed=0, n_starts=2)
    pooled = gp_fit(ds, "w2", seed=0, n_starts=2, aux=aux, aux_mode="concat")
    t_plain = plain.factors[0].table
    t_pooled = pooled.factors[0].table
    assert t_pooled.payloads[0].m == 2 * t_plain.payloads[0].m


# ---------------------------------------------------------------------------
# serialization


def test_model_json_round_trip():
    ds = toy_dataset(n=18, seed=20)
    model = gp_fit(ds, "w2", seed=0, n_starts=2)
    payload = json.loads(json.dumps(model_to_json(model)))
    again = model_from_json(payload)
    test = toy_dataset(n=25, seed=21)
    p1, p2 = predict(model, test), predict(again, test)
    np.testing.assert_array_equal(p1.mean, p2.mean)
    np.testing.assert_array_equal(p1.variance, p2.variance)
    lm1, lv1 = loo_residuals(model)
    lm2, lv2 = loo_residuals(again)
    np.testing.assert_array_equal(lm1, lm2)
    np.testing.assert_array_equal(lv1, lv2)


def test_model_json_excludes_timings():
    ds = toy_dataset(n=12, seed=22)
    model = gp_fit(ds, "w2", seed=0, n_starts=2)
    payload = model_to_json(model)
    flat = json.dumps(payload)
    assert "fit_seconds" not in flat
    assert "fit_info" not in flat


def test_model_json_detects_corruption():
    ds = toy_dataset(n=12, seed=23)
    model = gp_fit(ds, "w2", seed=0, n_starts=2)
    payload = model_to_json(model)
    payload["cholesky_lower_row_major"][0] *= 1.5
    with pytest.raises(DataError, match="Cholesky"):
        model_from_json(payload)


def test_model_save_load_file(tmp_path):
    ds = toy_dataset(n=12, seed=24)
    model = gp_fit(ds, "w2", seed=0, n_starts=2)
    path = tmp_path / "model.json"
    model.save(path)
    again = GPModel.load(path)
    np.testing.assert_array_equal(predict(model, ds).mean, predict(again, ds).mean)


# ---------------------------------------------------------------------------
# encoding selection


def test_select_encoding_by_loo_mechanics():
    ds = toy_dataset(n=24, seed=25)
    best, scores = select_encoding_by_loo(ds, ["mean", "w2"], seed=0, n_starts=2)
    assert set(best) == {"u0"}
    assert best["u0"] in ("mean", "w2")
    assert len(scores) == 2
    assert min(s["loo_mse"] for s in scores) == \
        [s for s in scores if s["plan"] == best][0]["loo_mse"]
    with pytest.raises(ConfigError):
        select_encoding_by_loo(ds, ["mean", "w2"], max_combos=1, seed=0)


def test_select_encoding_dict_candidates():
    rng = np.random.default_rng(26)
    n = 30
    x = rng.uniform(-1, 1, size=(n, 2))
    u = np.column_stack([rng.integers(0, 2, n), rng.integers(0, 3, n)])
    y = x[:, 0] + u[:, 0] - 0.5 * u[:, 1]
    ds = make_dataset(x, u, y[:, None], cat_levels=(("a", "b"), ("p", "q", "r")))
    cands = {"u0": ["mean"], "u1": ["w2", "mmd"]}
    best, scores = select_encoding_by_loo(ds, cands, seed=0, n_starts=2)
    assert best["u0"] == "mean"
    assert best["u1"] in ("w2", "mmd")
    assert len(scores) == 2
    with pytest.raises(ConfigError):
        select_encoding_by_loo(ds, {"u0": ["mean"]}, seed=0)
