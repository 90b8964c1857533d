import json

import numpy as np
import pytest
import yaml

from hmrnn.cli import main
from hmrnn.experiments import Bench2Config, Study1Config, config_from_dict, run_study1
from hmrnn.errors import InvalidInputError
from hmrnn.io import read_json, read_model, read_sequences

ONE_SCENARIO = {"ks": [5], "psi_values": [0.9], "pii_values": [0.6], "master_seed": 3}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _write_config(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_simulate_fit_evaluate_pipeline(tmp_path, capsys):
    code, _, _ = run(capsys, "--out-dir", tmp_path, "--seed", 4, "simulate", "--k", 5, "--pii", 0.6, "--psii", 0.9, "--N", 20)
    assert code == 0
    data = read_sequences(tmp_path / "sequences.csv")
    assert len(data) == 20 and data.lengths.tolist() == [61] * 20
    assert read_json(tmp_path / "manifest.json")["config"]["seed"] == 4

    for cmd in ("fit-em", "fit-gd"):
        code, out, _ = run(capsys, cmd, "--data", tmp_path / "sequences.csv", "--k", 5, "--freeze-pi", "--out-dir", tmp_path)
        assert code == 0, out
        report = read_json(json.loads(out)["report"])
        assert {"model", "log_likelihood_trace", "iterations", "reason", "wall_clock_seconds"} <= set(report)
        assert report["model"]["pi"] == [1.0, 0, 0, 0, 0]

    code, out, _ = run(
        capsys, "evaluate", "--model", tmp_path / "fit_em.json", "--data", tmp_path / "sequences.csv",
        "--holdout", tmp_path / "holdout.csv", "--truth", tmp_path / "truth.json", "--out", tmp_path / "m.json",
    )
    assert code == 0
    metrics = read_json(tmp_path / "m.json")
    assert metrics["holdout_log_likelihood"] < 0
    assert 0 <= metrics["wasserstein_P"] < 1


def test_fit_aug_single_and_cross_validated(tmp_path, capsys):
    from hmrnn.io import save_dataset
    from hmrnn.simgen import build_covariate_benchmark

    paths = save_dataset(tmp_path, build_covariate_benchmark(n_patients=40, seed=1).data, "bench")
    common = ["--data", paths["sequences"], "--covariates", paths["covariates"], "--aux", paths["aux"], "--out-dir", tmp_path]
    code, out, err = run(capsys, "fit-aug", *common, "--max-epochs", 30)
    assert code == 0, err
    report = read_json(tmp_path / "fit_aug.json")
    assert set(report["component_traces"]) == {"seq_nll", "aux_nll"}
    assert read_model(tmp_path / "fit_aug.json").k == 3
    code, out, err = run(capsys, "fit-aug", *common, "--folds", 2, "--max-epochs", 30)
    assert code == 0, err
    assert 0 <= json.loads(out)["aug_better_folds"] <= 2


def test_errors_are_json_on_stderr(tmp_path, capsys):
    code, _, err = run(capsys, "fit-em", "--data", tmp_path / "missing.csv")
    assert code == 1
    assert json.loads(err)["error"] == "FileNotFoundError"

    bad = tmp_path / "bad.csv"
    bad.write_text("a,0,,2\n")
    code, _, err = run(capsys, "fit-em", "--data", bad)
    assert code == 1 and json.loads(err)["error"] == "InvalidInputError"

    code, _, err = run(capsys, "simulate", "--k", 5)
    assert code == 2 and json.loads(err)["error"] == "UsageError"


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.yaml", {**ONE_SCENARIO, "learnin_rate": 3})
    code, _, err = run(capsys, "study1", "--config", cfg, "--out-dir", tmp_path / "o")
    assert code == 1
    assert "learnin_rate" in json.loads(err)["message"]
    with pytest.raises(InvalidInputError, match="gd: unknown key.*lr"):
        config_from_dict(Bench2Config, {"gd": {"lr": 1}})
    with pytest.raises(InvalidInputError):
        config_from_dict(Study1Config, {"replicates": "two"})


def test_study1_single_scenario_report(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.yaml", ONE_SCENARIO)
    code, out, err = run(capsys, "study1", "--config", cfg, "--out-dir", tmp_path / "o")
    assert code == 0, err
    reports = list((tmp_path / "o" / "scenarios").glob("*.json"))
    assert len(reports) == 1
    record = read_json(reports[0])
    for tag in ("em", "gd"):
        for field in ("wasserstein_P", "wasserstein_Psi", "holdout_ll"):
            assert np.isfinite(record[tag][field])
    agg = (tmp_path / "o" / "aggregate.csv").read_text().splitlines()
    assert agg[0].startswith("group,value,n,em_wasserstein_P")
    assert json.loads(out)["n_scenarios"] == 1


def _artifacts(root):
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "timings.json"
    }


def test_study1_rerun_is_byte_identical_and_regenerable(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.yaml", {**ONE_SCENARIO, "pii_values": [0.4, 0.8]})
    for name in ("a", "b"):
        assert run(capsys, "study1", "--config", cfg, "--out-dir", tmp_path / name)[0] == 0
    first = _artifacts(tmp_path / "a")
    assert first == _artifacts(tmp_path / "b")
    assert len(first) == 2 + 3  # two scenarios, manifest, aggregate, summary

    manifest = read_json(tmp_path / "a" / "manifest.json")
    regen = config_from_dict(Study1Config, manifest["config"])
    run_study1(regen, tmp_path / "c")
    assert _artifacts(tmp_path / "c") == first


def test_seed_flag_overrides_config(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.yaml", ONE_SCENARIO)
    run(capsys, "--seed", 11, "study1", "--config", cfg, "--out-dir", tmp_path / "o")
    assert read_json(tmp_path / "o" / "manifest.json")["config"]["master_seed"] == 11


def test_bench2_table_layout(tmp_path, capsys):
    cfg = _write_config(tmp_path / "b.yaml", {"n_patients": 60, "folds": 3, "fit_full": True, "gd": {"max_epochs": 50}})
    code, out, err = run(capsys, "bench2", "--config", cfg, "--out-dir", tmp_path / "o")
    assert code == 0, err
    report = read_json(tmp_path / "o" / "report.json")
    table = report["table1"]
    assert table["columns"] == ["baum_welch", "augmented_hmrnn"]
    for name in ("P", "Psi"):
        for m in table[name]:
            assert np.asarray(m).shape == (3, 3)
            np.testing.assert_allclose(np.sum(m, axis=1), 1.0)
    assert len(report["folds"]) == 3
    text = (tmp_path / "o" / "table1.txt").read_text().splitlines()
    assert [line.split("|")[0].strip() for line in text] == ["", "pi", "P", "", "", "Psi", "", "", "L", "p_bar"]
    folds = (tmp_path / "o" / "folds.csv").read_text().splitlines()
    assert len(folds) == 4


def test_study1_worker_processes_match_serial(tmp_path):
    cfg = config_from_dict(Study1Config, {**ONE_SCENARIO, "pii_values": [0.4, 0.8]})
    run_study1(cfg, tmp_path / "serial")
    cfg.threads = 2
    run_study1(cfg, tmp_path / "pool")
    a, b = _artifacts(tmp_path / "serial"), _artifacts(tmp_path / "pool")
    a.pop("manifest.json"), b.pop("manifest.json")
    assert a == b
