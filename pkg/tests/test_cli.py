import csv
import json
from pathlib import Path

import numpy as np
import pytest

from interpreg import simulate as sim
from interpreg.cli import main
from interpreg.data import write_csv, write_spec
from interpreg.models import load_model


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_dataset(d, folder, stem="data"):
    folder.mkdir(parents=True, exist_ok=True)
    data, spec = folder / f"{stem}.csv", folder / f"{stem}.spec.json"
    write_csv(d, data)
    write_spec(d, spec)
    return data, spec


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def fitted_sample(tmp_path, sample_paths):
    data, spec = sample_paths
    out = tmp_path / "fit"
    assert run("fit", "--data", data, "--spec", spec, "--out", out) == 0
    return data, spec, out / "model.json"


# ------------------------------------------------------------------- fit

def test_fit_ols_smoke(fitted_sample, capsys):
    metrics = read_rows(fitted_sample[2].parent / "metrics.csv")
    assert [r["split"] for r in metrics] == ["train", "test"]
    for r in metrics:
        assert np.isfinite(float(r["mae"])) and float(r["r2"]) <= 1.0
    manifest = json.loads((fitted_sample[2].parent / "manifest.json").read_text())
    assert manifest["seed"] == 0 and set(manifest["inputs"]) == {"linear20.csv", "linear20.spec.json"}


def test_fit_lasso_huge_lambda_has_no_active_coefficients(tmp_path, sample_paths):
    data, spec = sample_paths
    assert run("fit", "--data", data, "--spec", spec, "--model-family", "lasso",
               "--lambda", 1e6, "--out", tmp_path) == 0
    assert all(r["n_nonzero"] == "0" for r in read_rows(tmp_path / "metrics.csv"))


@pytest.mark.slow
def test_fit_mlp_reference_config_on_ohe_sequences(tmp_path):
    d, _ = sim.generate_ohe_sequence(600, noise_sd=0.1, seed=4)
    data, spec = write_dataset(d, tmp_path)
    assert run("fit", "--data", data, "--spec", spec, "--model-family", "mlp", "--hidden-units", 10,
               "--l1-hidden", 1e-4, "--seed", 1, "--out", tmp_path / "o") == 0
    test = read_rows(tmp_path / "o" / "metrics.csv")[1]
    assert float(test["r2"]) > 0


def test_config_file_replaces_flags(tmp_path, sample_paths):
    data, spec = sample_paths
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"data": str(data), "spec": str(spec), "model_family": "lasso", "lam": 1e6}))
    assert run("fit", "--config", cfg, "--out", tmp_path / "o") == 0
    assert load_model(tmp_path / "o" / "model.json").family == "lasso"
    opts = json.loads((tmp_path / "o" / "manifest.json").read_text())["options"]
    assert opts["model_family"] == "lasso" and opts["lam"] == 1e6


def test_config_file_unknown_key_rejected(tmp_path, sample_paths):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"no_such_option": 1}))
    assert run("fit", "--config", cfg, "--out", tmp_path) != 0


# ------------------------------------------------------------------- pd / ice / hstat

def test_pd_slope_equals_coefficient(tmp_path, fitted_sample):
    data, spec, model = fitted_sample
    assert run("pd", "--data", data, "--spec", spec, "--model", model, "--grid", 10, "--out", tmp_path) == 0
    m = load_model(model)
    for name, coef in zip(m.feature_names, m.coef):
        rows = read_rows(tmp_path / f"pd_{name}.csv")
        x = np.array([float(r["grid_value"]) for r in rows])
        pd = np.array([float(r["pd"]) for r in rows])
        assert abs(np.polyfit(x, pd, 1)[0] - coef) < 1e-8, name


def test_ice_means_equal_pd(tmp_path, fitted_sample):
    data, spec, model = fitted_sample
    common = ["--data", data, "--spec", spec, "--model", model, "--columns", "x0,size", "--grid", 7]
    assert run("pd", *common, "--out", tmp_path / "pd") == 0
    assert run("ice", *common, "--out", tmp_path / "ice") == 0
    for c in ("x0", "size"):
        pd = np.array([float(r["pd"]) for r in read_rows(tmp_path / "pd" / f"pd_{c}.csv")])
        ice = read_rows(tmp_path / "ice" / f"ice_{c}.csv")
        grid = sorted({r["grid_value"] for r in ice}, key=float)
        means = [np.mean([float(r["value"]) for r in ice if r["grid_value"] == g]) for g in grid]
        assert np.max(np.abs(np.array(means) - pd)) < 1e-12


def test_hstat_additive_fit_rarely_exceeds_null(tmp_path):
    d = sim.generate(sim.SimConfig(n=200, alpha=0.0, gamma=0.0, seed=11))
    data, spec = write_dataset(d, tmp_path)
    clean = 0
    for seed in range(20):
        out = tmp_path / f"s{seed}"
        assert run("fit", "--data", data, "--spec", spec, "--seed", seed, "--out", out) == 0
        assert run("hstat", "--data", data, "--spec", spec, "--model", out / "model.json",
                   "--nulls", 20, "--seed", seed, "--out", out) == 0
        rows = read_rows(out / "h_report.csv")
        assert len(rows) == 1 and rows[0]["null_q95"] != ""
        clean += all(r["exceeds_95"] == "false" for r in rows)
    assert clean >= 18


def test_hstat_without_nulls_leaves_quantiles_empty(tmp_path, fitted_sample):
    data, spec, model = fitted_sample
    assert run("hstat", "--data", data, "--spec", spec, "--model", model, "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "h_report.csv")
    assert len(rows) == 6
    assert all(float(r["h"]) < 1e-8 and r["null_q95"] == "" for r in rows)


def test_schema_mismatch_is_a_validation_error(tmp_path, fitted_sample, capsys):
    d = sim.generate(sim.SimConfig(n=40, seed=0))
    data, spec = write_dataset(d, tmp_path)
    capsys.readouterr()
    assert run("pd", "--data", data, "--spec", spec, "--model", fitted_sample[2], "--out", tmp_path) == 3
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "do not match" in err[0]


# ------------------------------------------------------------------- simulate

def test_simulate_interaction_shape(tmp_path):
    # default alpha list; fewer rows and seeds than the default keep this quick
    assert run("simulate", "--ablation", "interaction", "--n", 200, "--seeds", 2, "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "sweep_interaction.csv")
    assert [(r["axis_value"], r["family"]) for r in rows] == [
        (repr(a), f) for a in (0.0, 0.5, 1.0, 1.5, 2.0) for f in ("ols", "krr")]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["options"]["replicate_seeds"]) == 2
    assert manifest["options"]["base_config"]["gamma"] == 0.0


def test_simulate_nuisance_includes_lasso(tmp_path):
    assert run("simulate", "--ablation", "nuisance", "--extra", "0,4", "--seeds", 2, "--out", tmp_path) == 0
    fams = {r["family"] for r in read_rows(tmp_path / "sweep_nuisance.csv")}
    assert fams == {"ols", "lasso", "krr"}


def test_simulate_unknown_ablation(tmp_path, capsys):
    assert run("simulate", "--ablation", "weather", "--out", tmp_path) == 3
    assert "unknown ablation" in capsys.readouterr().err


# ------------------------------------------------------------------- compare

def test_compare_identical_families_correlate_perfectly(tmp_path, sample_paths):
    data, spec = sample_paths
    assert run("compare", "--data", data, "--spec", spec, "--families", "mlp,mlp,ols",
               "--epochs", 200, "--out", tmp_path) == 0
    corr = read_rows(tmp_path / "prediction_correlation.csv")
    assert float(corr[0]["mlp"]) == 1.0 and float(corr[2]["ols"]) == 1.0
    assert [r["family"] for r in read_rows(tmp_path / "comparison.csv")] == ["mlp", "mlp", "ols"]


def _compare_maes(tmp_path, cfg, seeds):
    d = sim.generate(cfg)
    data, spec = write_dataset(d, tmp_path)
    maes = {}
    for seed in seeds:
        out = tmp_path / f"c{seed}"
        assert run("compare", "--data", data, "--spec", spec, "--seed", seed, "--out", out) == 0
        for r in read_rows(out / "comparison.csv"):
            maes.setdefault(r["family"], []).append(float(r["test_mae"]))
    return {f: np.array(v) for f, v in maes.items()}


@pytest.mark.slow
def test_compare_additive_truth_keeps_ols_competitive(tmp_path):
    maes = _compare_maes(tmp_path, sim.SimConfig(n=400, alpha=0.0, gamma=0.0, seed=2), range(5))
    best = min(maes, key=lambda f: maes[f].mean())
    band = 2 * sim.pooled_sd(maes["ols"].std(ddof=1), maes[best].std(ddof=1))
    assert maes["ols"].mean() - maes[best].mean() <= band


@pytest.mark.slow
def test_compare_interaction_truth_favours_flexible_models(tmp_path):
    maes = _compare_maes(tmp_path, sim.SimConfig(n=1000, alpha=2.0, gamma=0.0, seed=2), [0])
    assert maes["krr"][0] < maes["ols"][0] and maes["mlp"][0] < maes["ols"][0]


# ------------------------------------------------------------------- errors and determinism

def test_missing_input_is_io_error(tmp_path, sample_paths, capsys):
    assert run("fit", "--data", tmp_path / "absent.csv", "--spec", sample_paths[1], "--out", tmp_path) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("interpreg: I/O error")


def test_bad_spec_is_validation_error(tmp_path, sample_paths, capsys):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"x0": {"kind": "continuous"}}))
    assert run("fit", "--data", sample_paths[0], "--spec", spec, "--out", tmp_path) == 3
    assert capsys.readouterr().err.startswith("interpreg: validation error")


def test_divergence_is_numeric_error(tmp_path, sample_paths, capsys):
    data, spec = sample_paths
    assert run("fit", "--data", data, "--spec", spec, "--model-family", "mlp",
               "--learning-rate", 1e8, "--epochs", 50, "--out", tmp_path) == 4
    err = capsys.readouterr().err
    assert err.startswith("interpreg: numeric error") and "learning" in err


def _snapshot(folder: Path):
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir())}


@pytest.mark.parametrize("argv", [
    ["fit", "--model-family", "mlp", "--epochs", "300"],
    ["fit", "--model-family", "krr"],
    ["compare", "--families", "ols,lasso,krr", "--lambda", "0.01"],
    ["simulate", "--ablation", "binning", "--bins", "2,4", "--n", "150", "--seeds", "2"],
])
def test_reruns_are_byte_identical(tmp_path, sample_paths, argv):
    data, spec = sample_paths
    extra = [] if argv[0] == "simulate" else ["--data", str(data), "--spec", str(spec)]
    for name in ("a", "b"):
        assert run(*argv, *extra, "--seed", 3, "--out", tmp_path / name) == 0
    assert _snapshot(tmp_path / "a") == _snapshot(tmp_path / "b")


def test_interpret_reruns_are_byte_identical(tmp_path, fitted_sample):
    data, spec, model = fitted_sample
    for cmd in ("pd", "ice", "hstat"):
        for name in ("a", "b"):
            args = [cmd, "--data", data, "--spec", spec, "--model", model, "--out", tmp_path / cmd / name]
            if cmd == "hstat":
                args += ["--columns", "x0,x1", "--nulls", 20]
            assert run(*args) == 0
        assert _snapshot(tmp_path / cmd / "a") == _snapshot(tmp_path / cmd / "b")
