"""Command-line entry point: fit, predict, benchmark, sobol, encode-export.

Every subcommand accepts a JSON config file (``--config``) whose keys match
the long flag names; explicit flags override config values.  The fully
resolved configuration (including defaulted seeds) is echoed into each
command's JSON artifact.  Floating-point values are written with full
precision in machine artifacts and 4 significant digits in printed
summaries.

Exit codes: 0 success, 2 configuration/IO error, 3 data/model error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import benchfns, gp
from .data import ColumnSchema, MixedDataset, load_csv, load_schema
from .distances import (METRICS, distance_matrix_to_csv, level_distance_matrix)
from .encoders import (distributional_encoding, histogram_encoding, mean_encoding,
                       mean_std_encoding, onehot_encoding)
from .errors import ConfigError, DataError, MixedGPError, NumericalError
from .sensitivity import build_interaction_plan, sobol_report

_EXIT_CODES = {ConfigError: 2, DataError: 3, NumericalError: 4}


def _fmt(v) -> str:
    return format(float(v), ".4g")


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _resolve_config(defaults: dict, args: argparse.Namespace) -> dict:
    """defaults <- config file <- explicit flags (flags win)."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = _read_json(args.config)
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"{args.config}: unknown config keys {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _require(cfg: dict, *keys):
    for key in keys:
        if cfg.get(key) is None:
            raise ConfigError(f"missing required setting --{key.replace('_', '-')}")


def _input_file(path, what: str) -> str:
    if not os.path.isfile(path):
        raise ConfigError(f"{what} file not found: {path}")
    return path


def _out_dir(cfg: dict) -> str:
    out = cfg.get("out") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _as_list(value):
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return list(value)


def _output_index(names, value, what="output") -> int:
    if isinstance(value, bool):
        raise ConfigError(f"bad {what}: {value!r}")
    if isinstance(value, int):
        idx = value
    elif isinstance(value, str) and value.lstrip("-").isdigit():
        idx = int(value)
    else:
        try:
            return list(names).index(value)
        except ValueError:
            raise ConfigError(f"unknown {what} {value!r}; have {list(names)}") from None
    if not 0 <= idx < len(names):
        raise ConfigError(f"{what} index {idx} out of range for {list(names)}")
    return idx


def _plan_value(raw):
    if isinstance(raw, dict):
        return raw
    if isinstance(raw, str) and raw.lstrip().startswith("{"):
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid plan JSON: {exc}") from exc
    return raw


def _schema_from_model(model: gp.GPModel, header, path) -> tuple:
    """Schema for a prediction-time CSV, derived from the model's columns.

    Continuous and output columns reuse the training schema; categorical
    columns leave the vocabulary undeclared so new levels load cleanly (the
    predictor decides whether they are usable).  Only columns present in
    the file are kept, but every model input must be present.
    """
    by_name = {c.name: c for c in model.schema}
    cols = []
    for name in header:
        col = by_name.get(name)
        if col is None:
            raise DataError(f"{path}: unknown column {name!r} for this model")
        if col.kind == "categorical":
            col = ColumnSchema(col.name, "categorical")
        cols.append(col)
    for col in model.schema:
        if col.kind != "output" and col.name not in header:
            raise DataError(f"{path}: missing model input column {col.name!r}")
    return tuple(cols)


def _csv_header(path) -> list:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip() and not line.startswith("#"):
                    return [h.strip() for h in line.rstrip("\n").split(",")]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    raise DataError(f"{path}: no header row")


def _load_for_model(model: gp.GPModel, path) -> MixedDataset:
    return load_csv(path, _schema_from_model(model, _csv_header(path), path))


def _aux_schema(schema) -> tuple:
    """Training schema with categorical vocabularies undeclared."""
    return tuple(ColumnSchema(c.name, c.kind) if c.kind == "categorical" else c
                 for c in schema)


# ---------------------------------------------------------------------------
# fit


FIT_DEFAULTS = {
    "train": None, "schema": None, "plan": "w2",
    "candidates": ["mean", "mean_std", "w2", "mmd"], "max_combos": 256,
    "output": 0, "noise": False, "kernel": "matern52", "n_starts": 8,
    "r": 2.0, "n_quantiles": 100, "n_directions": 100,
    "aux": None, "aux_mode": "concat", "model_name": "model.json",
    "seed": 0, "out": ".", "jobs": 1,
}


def cmd_fit(args) -> int:
    cfg = _resolve_config(FIT_DEFAULTS, args)
    _require(cfg, "train", "schema")
    schema = load_schema(_input_file(cfg["schema"], "schema"))
    train = load_csv(_input_file(cfg["train"], "training CSV"), schema)
    out_index = _output_index(train.output_names, cfg["output"])
    cfg["output"] = train.output_names[out_index]
    aux_ds = None
    if cfg["aux"]:
        aux_ds = load_csv(_input_file(cfg["aux"], "auxiliary CSV"), _aux_schema(schema))
    fit_kwargs = dict(output=out_index, noise=bool(cfg["noise"]),
                      continuous_kernel=cfg["kernel"], n_starts=int(cfg["n_starts"]),
                      seed=int(cfg["seed"]), r=float(cfg["r"]),
                      n_quantiles=int(cfg["n_quantiles"]),
                      n_directions=int(cfg["n_directions"]),
                      aux=aux_ds, aux_mode=cfg["aux_mode"])

    plan = _plan_value(cfg["plan"])
    selection = None
    if plan == "bestloo":
        candidates = _as_list(cfg["candidates"])
        cfg["candidates"] = candidates
        plan, scores = gp.select_encoding_by_loo(train, candidates,
                                                 max_combos=int(cfg["max_combos"]),
                                                 **fit_kwargs)
        selection = scores
        print("encoding selection by leave-one-out MSE:")
        for rec in scores:
            mark = " <- selected" if rec["plan"] == plan else ""
            plan_txt = ", ".join(f"{k}={v}" for k, v in rec["plan"].items())
            print(f"  {plan_txt}: loo_mse={_fmt(rec['loo_mse'])} "
                  f"loglik={_fmt(rec['loglik'])}{mark}")
        cfg["plan"] = plan

    model = gp.fit(train, plan, **fit_kwargs)
    out = _out_dir(cfg)
    model_path = os.path.join(out, cfg["model_name"])
    model.save(model_path)

    loo_mean, _ = gp.loo_residuals(model)
    loo_rmse = float(np.sqrt(np.mean((train.y[:, out_index] - loo_mean) ** 2)))
    kc = model.config
    summary = {"config": cfg, "model_path": model_path, "loglik": model.loglik,
               "loo_rmse": loo_rmse, "n_train": train.n,
               "hyperparameters": kc.to_dict(), "fit_info": model.fit_info}
    if selection is not None:
        summary["selection"] = selection
    _write_json(os.path.join(out, "fit_summary.json"), summary)

    print(f"fitted on {train.n} rows; wrote {model_path}")
    print(f"log-likelihood: {_fmt(model.loglik)}   LOO RMSE: {_fmt(loo_rmse)}")
    print("lengthscales: " + ", ".join(f"{nm}={_fmt(v)}" for nm, v
                                       in zip(kc.feature_names, kc.lengthscales)))
    if kc.factor_labels:
        print("factors: " + ", ".join(
            f"{lab}[{met}] gamma={_fmt(g)} beta={_fmt(b)}"
            for lab, met, g, b in zip(kc.factor_labels, kc.metrics, kc.gammas, kc.betas)))
    print(f"sigma2={_fmt(kc.sigma2)} eta2={_fmt(kc.eta2)}")
    return 0


# ---------------------------------------------------------------------------
# predict


PREDICT_DEFAULTS = {
    "model": None, "test": None, "aux": None, "include_noise": False,
    "predictions_name": "predictions.csv", "seed": 0, "out": ".", "jobs": 1,
}


def cmd_predict(args) -> int:
    cfg = _resolve_config(PREDICT_DEFAULTS, args)
    _require(cfg, "model", "test")
    model = gp.GPModel.load(_input_file(cfg["model"], "model"))
    test = _load_for_model(model, _input_file(cfg["test"], "test CSV"))
    aux_ds = None
    if cfg["aux"]:
        aux_ds = _load_for_model(model, _input_file(cfg["aux"], "auxiliary CSV"))
    pred = gp.predict(model, test, include_noise=bool(cfg["include_noise"]), aux=aux_ds)

    out = _out_dir(cfg)
    lines = ["row,mean,variance"]
    lines += [f"{i},{m:.17g},{v:.17g}" for i, (m, v)
              in enumerate(zip(pred.mean, pred.variance))]
    csv_path = os.path.join(out, cfg["predictions_name"])
    _write_text(csv_path, "\n".join(lines) + "\n")
    _write_json(os.path.join(out, "predict_summary.json"),
                {"config": cfg, "n_rows": test.n, "predictions_path": csv_path})
    print(f"wrote {test.n} predictions to {csv_path}")
    print(f"mean in [{_fmt(pred.mean.min())}, {_fmt(pred.mean.max())}], "
          f"variance in [{_fmt(pred.variance.min())}, {_fmt(pred.variance.max())}]")
    return 0


# ---------------------------------------------------------------------------
# benchmark


BENCHMARK_DEFAULTS = {
    "function": None, "methods": ["mean", "mean_std", "w2", "mmd"],
    "n": None, "n_test": benchfns.DEFAULT_TEST_SIZE,
    "replications": benchfns.DEFAULT_REPLICATIONS, "noise": False,
    "n_starts": 8, "kernel": "matern52", "n_quantiles": 100, "n_directions": 100,
    "aux_function": None, "aux_n": 0, "seed": 0, "out": ".", "jobs": 1,
}


def cmd_benchmark(args) -> int:
    cfg = _resolve_config(BENCHMARK_DEFAULTS, args)
    _require(cfg, "function")
    cfg["methods"] = _as_list(cfg["methods"])
    bench = benchfns.BenchmarkConfig(
        function=cfg["function"], methods=tuple(cfg["methods"]),
        n=None if cfg["n"] is None else int(cfg["n"]), n_test=int(cfg["n_test"]),
        replications=int(cfg["replications"]), seed=int(cfg["seed"]),
        noise=bool(cfg["noise"]), n_starts=int(cfg["n_starts"]),
        continuous_kernel=cfg["kernel"], n_quantiles=int(cfg["n_quantiles"]),
        n_directions=int(cfg["n_directions"]), aux_function=cfg["aux_function"],
        aux_n=int(cfg["aux_n"]), jobs=int(cfg["jobs"]))
    report = benchfns.run_benchmark(bench)

    out = _out_dir(cfg)
    payload = report.to_json()
    payload["config"]["cli"] = cfg
    _write_json(os.path.join(out, "report.json"), payload)
    _write_text(os.path.join(out, "records.csv"), report.records_csv())

    print(f"{bench.function}: {bench.replications} replications, "
          f"n={report.config['n']}, n_test={bench.n_test}")
    for key, agg in report.aggregates.items():
        if agg["count"]:
            print(f"  {key}: median={_fmt(agg['median'])} mean={_fmt(agg['mean'])} "
                  f"std={_fmt(agg['std'])} (n={agg['count']}, failed={agg['failed']})")
        else:
            print(f"  {key}: no successful replications (failed={agg['failed']})")
    print(f"wrote {os.path.join(out, 'report.json')} and {os.path.join(out, 'records.csv')}")
    if report.n_failed:
        print(f"error: {report.n_failed} fit(s) failed; see report.json", file=sys.stderr)
        return 4
    return 0


# ---------------------------------------------------------------------------
# sobol


SOBOL_DEFAULTS = {
    "data": None, "schema": None, "output": 0, "second_order": False,
    "plan": False, "main_threshold": 0.05, "interaction_threshold": 0.05,
    "n_bins": 4, "seed": 0, "out": ".", "jobs": 1,
}


def cmd_sobol(args) -> int:
    cfg = _resolve_config(SOBOL_DEFAULTS, args)
    _require(cfg, "data", "schema")
    schema = load_schema(_input_file(cfg["schema"], "schema"))
    ds = load_csv(_input_file(cfg["data"], "data CSV"), schema)
    out_index = _output_index(ds.output_names, cfg["output"])
    cfg["output"] = ds.output_names[out_index]

    want_second = bool(cfg["second_order"]) or bool(cfg["plan"])
    est = sobol_report(ds, output=out_index, second_order=want_second)
    payload = {"config": cfg, "first_order": est.first_order,
               "second_order": {f"{cat}*{x}": v for (cat, x), v in est.second_order.items()},
               "output_variance": est.output_variance}

    print("first-order Sobol indices:")
    for name, val in est.first_order.items():
        print(f"  S[{name}] = {_fmt(val)}")
    if est.second_order:
        print("second-order (categorical x continuous) indices:")
        for (cat, x), val in est.second_order.items():
            print(f"  S[{cat},{x}] = {_fmt(val)}")

    if cfg["plan"]:
        ip = build_interaction_plan(ds, main_threshold=float(cfg["main_threshold"]),
                                    interaction_threshold=float(cfg["interaction_threshold"]),
                                    n_bins=int(cfg["n_bins"]), output=out_index)
        actions = []
        print("encoding plan:")
        for name, action in ip.actions.items():
            if action.kind == "partitioned":
                desc = (f"partition by {action.x_name} into {action.n_bins} bins "
                        f"(interaction S={_fmt(action.interaction_index)})")
            elif action.kind == "standard_encoding":
                desc = f"standard encoding (main S={_fmt(action.main_index)})"
            else:
                desc = "no significant effect found; standard encoding by default"
            print(f"  {name}: {desc}")
            actions.append({"input": name, "kind": action.kind,
                            "main_index": action.main_index, "x_name": action.x_name,
                            "n_bins": action.n_bins,
                            "interaction_index": action.interaction_index})
        payload["plan"] = actions

    _write_json(os.path.join(_out_dir(cfg), "sobol.json"), payload)
    return 0


# ---------------------------------------------------------------------------
# encode-export


ENCODE_DEFAULTS = {
    "data": None, "schema": None, "input": None, "encoding": "distributional_1d",
    "outputs": [0], "distance": None, "normalize": False,
    "r": 2.0, "n_quantiles": 100, "n_directions": 100,
    "seed": 0, "out": ".", "jobs": 1,
}


def _payload_export(table, i):
    payload = table.payloads[i]
    if hasattr(payload, "samples"):
        if payload.dim == 1:
            return np.sort(payload.samples[:, 0]).tolist()
        return payload.samples.tolist()
    if hasattr(payload, "freqs"):
        return payload.freqs.tolist()
    return np.asarray(payload, dtype=float).tolist()


def cmd_encode_export(args) -> int:
    cfg = _resolve_config(ENCODE_DEFAULTS, args)
    _require(cfg, "data", "schema", "input")
    schema = load_schema(_input_file(cfg["schema"], "schema"))
    ds = load_csv(_input_file(cfg["data"], "data CSV"), schema)
    try:
        t = ds.categorical_names.index(cfg["input"])
    except ValueError:
        raise ConfigError(f"no categorical input named {cfg['input']!r}; "
                          f"have {list(ds.categorical_names)}") from None

    kind = cfg["encoding"]
    outputs = _as_list(cfg["outputs"]) if not isinstance(cfg["outputs"], int) \
        else [cfg["outputs"]]
    if kind == "mean":
        table = mean_encoding(ds, t, _output_index(ds.output_names, outputs[0]))
    elif kind == "mean_std":
        table = mean_std_encoding(ds, t, _output_index(ds.output_names, outputs[0]))
    elif kind == "onehot":
        table = onehot_encoding(ds, t)
    elif kind in ("distributional_1d", "distributional_md"):
        outs = tuple(_output_index(ds.output_names, o) for o in outputs)
        if kind == "distributional_1d" and len(outs) != 1:
            raise ConfigError("distributional_1d uses exactly one output")
        table = distributional_encoding(ds, t, outs)
    elif kind == "histogram":
        label_names = [c.name for c in ds.schema if c.kind == "output" and c.levels]
        table = histogram_encoding(ds, t, _output_index(label_names, outputs[0],
                                                        what="label output"))
    else:
        raise ConfigError(f"unknown encoding kind {kind!r}")
    cfg["outputs"] = [table.outputs] if isinstance(table.outputs, int) \
        else list(table.outputs)

    levels = [{"label": lab, "count": int(table.counts[i]),
               "payload": _payload_export(table, i)}
              for i, lab in enumerate(table.levels)]
    payload = {"config": cfg, "input": table.input_name, "kind": table.kind,
               "levels": levels}

    out = _out_dir(cfg)
    print(f"{table.input_name} [{table.kind}]: "
          + ", ".join(f"{lv['label']} (n={lv['count']})" for lv in levels))
    if cfg["distance"]:
        metric = cfg["distance"]
        if metric not in METRICS:
            raise ConfigError(f"unknown distance metric {metric!r}; choose from {METRICS}")
        D = level_distance_matrix(table, metric, r=float(cfg["r"]),
                                  n_quantiles=int(cfg["n_quantiles"]),
                                  n_directions=int(cfg["n_directions"]),
                                  seed=int(cfg["seed"]))
        csv_path = os.path.join(out, "distance.csv")
        _write_text(csv_path, distance_matrix_to_csv(D, normalize=bool(cfg["normalize"])))
        payload["distance_path"] = csv_path
        payload["distance_metric"] = metric
        shown = D.normalized() if cfg["normalize"] else D.values
        print(f"{metric} distance matrix{' (normalized)' if cfg['normalize'] else ''}:")
        for lab, row in zip(D.labels, shown):
            print("  " + lab + ": " + " ".join(_fmt(v) for v in row))
        print(f"wrote {csv_path}")

    json_path = os.path.join(out, "encoding.json")
    _write_json(json_path, payload)
    print(f"wrote {json_path}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_shared(parser):
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--seed", type=int, help="master random seed (default 0)")
    parser.add_argument("--out", help="output directory (default .)")
    parser.add_argument("--jobs", type=int, help="worker processes for replications")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixedgp",
        description="Gaussian-process surrogates with distributional encodings "
                    "of categorical inputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a GP model from a CSV + schema")
    p.add_argument("--train", help="training CSV path")
    p.add_argument("--schema", help="schema JSON path")
    p.add_argument("--plan", help="encoding plan: method name, JSON mapping, or 'bestloo'")
    p.add_argument("--candidates", help="comma list of methods for bestloo")
    p.add_argument("--max-combos", dest="max_combos", type=int)
    p.add_argument("--output", help="output column name or index")
    p.add_argument("--noise", action="store_const", const=True)
    p.add_argument("--kernel", choices=sorted(gp.CONTINUOUS_KERNELS))
    p.add_argument("--n-starts", dest="n_starts", type=int)
    p.add_argument("--r", type=float, help="Wasserstein order")
    p.add_argument("--n-quantiles", dest="n_quantiles", type=int)
    p.add_argument("--n-directions", dest="n_directions", type=int)
    p.add_argument("--aux", help="auxiliary CSV pooled into the encodings")
    p.add_argument("--aux-mode", dest="aux_mode", choices=("concat", "replace"))
    p.add_argument("--model-name", dest="model_name")
    _add_shared(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict from a saved model")
    p.add_argument("--model", help="model JSON path")
    p.add_argument("--test", help="test CSV path")
    p.add_argument("--aux", help="auxiliary CSV supplying unseen levels")
    p.add_argument("--include-noise", dest="include_noise", action="store_const", const=True)
    p.add_argument("--predictions-name", dest="predictions_name")
    _add_shared(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="replicated design/fit/RRMSE experiment")
    p.add_argument("--function", choices=sorted(benchfns.FUNCTIONS))
    p.add_argument("--methods", help="comma list of encoding methods")
    p.add_argument("--n", type=int, help="training size (default per function)")
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--noise", action="store_const", const=True)
    p.add_argument("--n-starts", dest="n_starts", type=int)
    p.add_argument("--kernel", choices=sorted(gp.CONTINUOUS_KERNELS))
    p.add_argument("--n-quantiles", dest="n_quantiles", type=int)
    p.add_argument("--n-directions", dest="n_directions", type=int)
    p.add_argument("--aux-function", dest="aux_function", choices=sorted(benchfns.FUNCTIONS))
    p.add_argument("--aux-n", dest="aux_n", type=int)
    _add_shared(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("sobol", help="rank-based Sobol indices and encoding plan")
    p.add_argument("--data", help="data CSV path")
    p.add_argument("--schema", help="schema JSON path")
    p.add_argument("--output", help="output column name or index")
    p.add_argument("--second-order", dest="second_order", action="store_const", const=True)
    p.add_argument("--plan", action="store_const", const=True,
                   help="derive a partition-or-standard encoding plan")
    p.add_argument("--main-threshold", dest="main_threshold", type=float)
    p.add_argument("--interaction-threshold", dest="interaction_threshold", type=float)
    p.add_argument("--n-bins", dest="n_bins", type=int)
    _add_shared(p)
    p.set_defaults(func=cmd_sobol)

    p = sub.add_parser("encode-export", help="export level encodings and distance matrices")
    p.add_argument("--data", help="data CSV path")
    p.add_argument("--schema", help="schema JSON path")
    p.add_argument("--input", help="categorical input to encode")
    p.add_argument("--encoding", choices=("mean", "mean_std", "onehot",
                                          "distributional_1d", "distributional_md",
                                          "histogram"))
    p.add_argument("--outputs", help="comma list of output columns (names or indices)")
    p.add_argument("--distance", choices=METRICS)
    p.add_argument("--normalize", action="store_const", const=True,
                   help="divide the distance matrix by its largest entry")
    p.add_argument("--r", type=float)
    p.add_argument("--n-quantiles", dest="n_quantiles", type=int)
    p.add_argument("--n-directions", dest="n_directions", type=int)
    _add_shared(p)
    p.set_defaults(func=cmd_encode_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MixedGPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in _EXIT_CODES.items():
            if isinstance(exc, klass):
                return code
        return 3
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
