import json
import pathlib
import subprocess
import sys

import numpy as np
import pytest

from mixedgp.cli import main

from conftest import DATA_DIR

_DATA = pathlib.Path(DATA_DIR)
DEMO = str(_DATA / "demo.csv")
DEMO_SCHEMA = str(_DATA / "demo_schema.json")
DEMO_CLASS = str(_DATA / "demo_class.csv")
DEMO_CLASS_SCHEMA = str(_DATA / "demo_class_schema.json")


def run(*argv):
    return main(list(argv))


def fit_demo(out, *extra):
    return run("fit", "--train", DEMO, "--schema", DEMO_SCHEMA,
               "--out", str(out), "--n-starts", "2", *extra)


# ---------------------------------------------------------------------------
# fit


def test_fit_writes_model_and_summary(tmp_path, capsys):
    assert fit_demo(tmp_path) == 0
    assert (tmp_path / "model.json").is_file()
    summary = json.loads((tmp_path / "fit_summary.json").read_text())
    assert summary["n_train"] == 10
    assert summary["config"]["plan"] == "w2"
    assert summary["config"]["output"] == "Y"
    assert isinstance(summary["loglik"], float)
    assert summary["loo_rmse"] > 0
    assert "lengthscales" in summary["hyperparameters"]
    out = capsys.readouterr().out
    assert "log-likelihood" in out and "gamma=" in out


def test_fit_missing_required_setting(tmp_path, capsys):
    assert run("fit", "--train", DEMO, "--out", str(tmp_path)) == 2
    assert "--schema" in capsys.readouterr().err


def test_fit_missing_file_is_config_error(tmp_path):
    assert fit_demo(tmp_path, "--schema", str(tmp_path / "nope.json")) == 2


def test_fit_wrong_columns_is_data_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("A,B,C,D\n1,2,red,3\n4,5,blue,6\n7,8,red,9\n")
    assert run("fit", "--train", str(bad), "--schema", DEMO_SCHEMA,
               "--out", str(tmp_path)) == 3


def test_fit_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"plan": "mean", "n_starts": 2}))
    assert run("fit", "--train", DEMO, "--schema", DEMO_SCHEMA,
               "--config", str(cfg), "--plan", "mean_std", "--out", str(tmp_path)) == 0
    summary = json.loads((tmp_path / "fit_summary.json").read_text())
    assert summary["config"]["plan"] == "mean_std"  # flag wins
    assert summary["config"]["n_starts"] == 2       # config file beats default


def test_fit_rejects_unknown_config_keys(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"not_a_setting": 1}))
    assert run("fit", "--train", DEMO, "--schema", DEMO_SCHEMA,
               "--config", str(cfg), "--out", str(tmp_path)) == 2
    assert "not_a_setting" in capsys.readouterr().err


def test_fit_bestloo_prints_selection(tmp_path, capsys):
    assert fit_demo(tmp_path, "--plan", "bestloo", "--candidates", "mean,w2") == 0
    out = capsys.readouterr().out
    assert "leave-one-out" in out and "<- selected" in out
    summary = json.loads((tmp_path / "fit_summary.json").read_text())
    assert isinstance(summary["config"]["plan"], dict)
    assert set(summary["config"]["plan"]) == {"U1"}
    assert len(summary["selection"]) == 2


def test_fit_plan_json_mapping(tmp_path):
    assert fit_demo(tmp_path, "--plan", '{"U1": "mean_std"}') == 0
    summary = json.loads((tmp_path / "fit_summary.json").read_text())
    features = summary["hyperparameters"]["feature_names"]
    assert "U1.mean" in features and "U1.std" in features


# ---------------------------------------------------------------------------
# predict


def test_fit_then_predict_interpolates(tmp_path):
    assert fit_demo(tmp_path) == 0
    assert run("predict", "--model", str(tmp_path / "model.json"),
               "--test", DEMO, "--out", str(tmp_path)) == 0
    lines = (tmp_path / "predictions.csv").read_text().strip().split("\n")
    assert lines[0] == "row,mean,variance"
    assert len(lines) == 11
    rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    truth = np.array([-1.5, 0.20, 0.48, 1.82, -4.2, 2.34, 4.51, -3.7, 0.86, -2.9])
    np.testing.assert_allclose(rows[:, 1], truth, atol=2e-3)
    assert np.all(rows[:, 2] >= 0)
    summary = json.loads((tmp_path / "predict_summary.json").read_text())
    assert summary["n_rows"] == 10


def test_predict_unseen_level_fails_without_aux(tmp_path, capsys):
    assert fit_demo(tmp_path) == 0
    test = tmp_path / "test.csv"
    test.write_text("X1,X2,U1\n0.5,0.0,purple\n")
    assert run("predict", "--model", str(tmp_path / "model.json"),
               "--test", str(test), "--out", str(tmp_path)) == 3
    assert "purple" in capsys.readouterr().err


def test_predict_unseen_level_with_aux(tmp_path):
    assert fit_demo(tmp_path) == 0
    # both rows sit at a training location, so the seen level interpolates
    # while the new level has no response observations at all
    test = tmp_path / "test.csv"
    test.write_text("X1,X2,U1\n0.52,-0.79,purple\n0.52,-0.79,green\n")
    aux = tmp_path / "aux.csv"
    aux.write_text("X1,X2,U1,Y\n0.3,1.0,purple,0.9\n0.6,-1.0,purple,1.1\n")
    assert run("predict", "--model", str(tmp_path / "model.json"),
               "--test", str(test), "--aux", str(aux), "--out", str(tmp_path)) == 0
    lines = (tmp_path / "predictions.csv").read_text().strip().split("\n")[1:]
    var_purple, var_green = (float(line.split(",")[2]) for line in lines)
    assert var_purple > 10 * var_green


def test_predict_unknown_column_is_data_error(tmp_path):
    assert fit_demo(tmp_path) == 0
    test = tmp_path / "test.csv"
    test.write_text("X1,X2,U1,EXTRA\n0.5,0.0,red,1\n")
    assert run("predict", "--model", str(tmp_path / "model.json"),
               "--test", str(test), "--out", str(tmp_path)) == 3


# ---------------------------------------------------------------------------
# benchmark


def bench_args(out, *extra):
    return ("benchmark", "--function", "beam", "--methods", "mean", "--n", "18",
            "--n-test", "40", "--replications", "2", "--n-starts", "1",
            "--out", str(out), *extra)


def test_benchmark_writes_report_and_records(tmp_path, capsys):
    assert run(*bench_args(tmp_path)) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config"]["n"] == 18
    assert report["config"]["cli"]["function"] == "beam"
    assert len(report["records"]) == 2
    assert "mean:y" in report["aggregates"]
    out = capsys.readouterr().out
    assert "median=" in out
    lines = (tmp_path / "records.csv").read_text().strip().split("\n")
    assert lines[0] == "rep,seed,method,output,rrmse"
    assert len(lines) == 3


def test_benchmark_records_identical_across_runs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(*bench_args(a)) == 0
    assert run(*bench_args(b)) == 0
    assert (a / "records.csv").read_bytes() == (b / "records.csv").read_bytes()


def test_benchmark_failed_fits_exit_4(tmp_path, capsys):
    assert run("benchmark", "--function", "beam", "--methods", "hist_chi2",
               "--n", "12", "--n-test", "20", "--replications", "1",
               "--out", str(tmp_path)) == 4
    assert "failed" in capsys.readouterr().err


def test_benchmark_unknown_method_exit_2(tmp_path):
    assert run("benchmark", "--function", "beam", "--methods", "w2+concat",
               "--n", "12", "--replications", "1", "--out", str(tmp_path)) == 2


# ---------------------------------------------------------------------------
# sobol


def test_sobol_prints_and_writes_indices(tmp_path, capsys):
    assert run("sobol", "--data", DEMO, "--schema", DEMO_SCHEMA,
               "--out", str(tmp_path)) == 0
    out = capsys.readouterr().out
    assert "S[X1]" in out and "S[U1]" in out
    payload = json.loads((tmp_path / "sobol.json").read_text())
    assert set(payload["first_order"]) == {"X1", "X2", "U1"}
    assert payload["second_order"] == {}
    assert payload["output_variance"] > 0


def test_sobol_plan_flag(tmp_path, capsys):
    assert run("sobol", "--data", DEMO, "--schema", DEMO_SCHEMA, "--plan",
               "--out", str(tmp_path)) == 0
    out = capsys.readouterr().out
    assert "encoding plan:" in out and "U1:" in out
    payload = json.loads((tmp_path / "sobol.json").read_text())
    assert payload["plan"][0]["input"] == "U1"
    assert payload["plan"][0]["kind"] in ("standard_encoding", "partitioned",
                                          "none_significant")
    assert "U1*X1" in payload["second_order"]


def test_sobol_output_by_name_and_bad_name(tmp_path, capsys):
    assert run("sobol", "--data", DEMO, "--schema", DEMO_SCHEMA,
               "--output", "Y", "--out", str(tmp_path)) == 0
    assert run("sobol", "--data", DEMO, "--schema", DEMO_SCHEMA,
               "--output", "Z", "--out", str(tmp_path)) == 2


# ---------------------------------------------------------------------------
# encode-export


def test_encode_export_distributional_payloads(tmp_path):
    assert run("encode-export", "--data", DEMO, "--schema", DEMO_SCHEMA,
               "--input", "U1", "--out", str(tmp_path)) == 0
    payload = json.loads((tmp_path / "encoding.json").read_text())
    assert payload["input"] == "U1"
    assert payload["kind"] == "distributional_1d"
    by_label = {lv["label"]: lv for lv in payload["levels"]}
    assert by_label["red"]["count"] == 4
    assert by_label["red"]["payload"] == [-4.2, -3.7, -2.9, -1.5]  # sorted samples


def test_encode_export_mean_matches_group_means(tmp_path):
    assert run("encode-export", "--data", DEMO, "--schema", DEMO_SCHEMA,
               "--input", "U1", "--encoding", "mean", "--out", str(tmp_path)) == 0
    payload = json.loads((tmp_path / "encoding.json").read_text())
    by_label = {lv["label"]: lv["payload"] for lv in payload["levels"]}
    assert by_label["red"] == pytest.approx([-3.075])
    assert by_label["blue"] == pytest.approx([2.89])


def test_encode_export_histogram_frequencies(tmp_path):
    assert run("encode-export", "--data", DEMO_CLASS, "--schema", DEMO_CLASS_SCHEMA,
               "--input", "U1", "--encoding", "histogram", "--outputs", "label",
               "--out", str(tmp_path)) == 0
    payload = json.loads((tmp_path / "encoding.json").read_text())
    by_label = {lv["label"]: lv["payload"] for lv in payload["levels"]}
    assert by_label["red"] == pytest.approx([0.25, 0.25, 0.5])


def test_encode_export_distance_csv(tmp_path, capsys):
    assert run("encode-export", "--data", DEMO, "--schema", DEMO_SCHEMA,
               "--input", "U1", "--distance", "w2", "--normalize",
               "--out", str(tmp_path)) == 0
    assert "distance matrix (normalized)" in capsys.readouterr().out
    lines = (tmp_path / "distance.csv").read_text().strip().split("\n")
    assert lines[0] == "level,red,green,blue"
    values = np.array([[float(v) for v in line.split(",")[1:]] for line in lines[1:]])
    assert values.max() == 1.0
    np.testing.assert_array_equal(np.diag(values), 0.0)


def test_encode_export_unknown_input(tmp_path, capsys):
    assert run("encode-export", "--data", DEMO, "--schema", DEMO_SCHEMA,
               "--input", "U9", "--out", str(tmp_path)) == 2
    assert "U9" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# process-level smoke test


def test_module_invocation_help():
    proc = subprocess.run([sys.executable, "-m", "mixedgp.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for word in ("fit", "predict", "benchmark", "sobol", "encode-export"):
        assert word in proc.stdout
