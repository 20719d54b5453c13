import json

import numpy as np
import pytest

from fedecado.federation import consensus_minimizer
from fedecado.harness import (ConfigError, build_problem, parse_config, partition_report,
                              run_experiment, sweep, usable_rate)

STIFF = {"dataset": "quadratic-ensemble", "clients": 4, "dim": 3, "spread": 50.0, "cond": 5.0,
         "alpha": 0.5}


def test_defaults_are_filled():
    cfg = parse_config({"method": "fedecado", "dataset": "gaussian-blobs"})
    rc = cfg.run_config()
    assert (rc.gamma, rc.stop_tol, rc.max_rounds) == (1e-2, 1e-6, 500)
    assert cfg["usable_threshold"] == 0.8 and cfg["objective"] == "logistic"


@pytest.mark.parametrize("raw, key", [
    ({"method": "fedecado", "dataset": "gaussian-blobs", "gamma": -1}, "gamma"),
    ({"method": "fedecado", "dataset": "gaussian-blobs", "learning_rate": 0.1}, "learning_rate"),
    ({"method": "fedecado", "dataset": "gaussian-blobs", "client_lr": 0.1}, "client_lr"),
    ({"method": "fedavg", "dataset": "gaussian-blobs", "gamma": 0.1}, "gamma"),
    ({"dataset": "gaussian-blobs"}, "method"),
    ({"method": "fedecado"}, "dataset"),
    ({"method": "fedecado", "dataset": "csv"}, "csv_path"),
    ({"method": "fedecado", "dataset": "gaussian-blobs", "clients": 2, "epochs": [1]}, "epochs"),
])
def test_invalid_configs_name_the_key(raw, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(raw)


def test_parse_config_file(tmp_path):
    p = tmp_path / "exp.json"
    p.write_text(json.dumps({"method": "fedavg", "dataset": "gaussian-blobs", "client_lr": 0.2}))
    cfg = parse_config(p)
    assert cfg.baseline_spec().client_lr == 0.2
    assert cfg.output_dir() == tmp_path / "exp_out"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(p)


def test_run_experiment_reaches_consensus(tmp_path):
    cfg = parse_config({"method": "fedecado", **STIFF})
    out = run_experiment(cfg, tmp_path)
    x_star = consensus_minimizer(build_problem(cfg).clients)
    assert out.status == 0 and out.summary["converged"]
    assert np.max(np.abs(out.result.x_c - x_star)) < 1e-3
    rows = [json.loads(l) for l in (tmp_path / "rounds.jsonl").read_text().splitlines()]
    assert [r["round"] for r in rows] == list(range(len(rows)))
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["final_loss"] == rows[-1]["loss"] and summary["rounds"] == len(rows)
    assert {"final_loss", "final_acc", "rounds", "diverged", "usable_threshold"} <= set(summary)


def test_fedavg_large_lr_diverges():
    out = run_experiment(parse_config({"method": "fedavg", "client_lr": 10.0, **STIFF}))
    assert out.status == 2 and out.summary["diverged"]


def test_identical_runs_give_identical_jsonl(tmp_path):
    cfg = {"method": "fedecado", "dataset": "gaussian-blobs", "clients": 3, "n_samples": 120,
           "max_rounds": 15, "seed": 4}
    run_experiment(parse_config(cfg), tmp_path / "a")
    run_experiment(parse_config(cfg), tmp_path / "b")
    assert (tmp_path / "a" / "rounds.jsonl").read_bytes() == (tmp_path / "b" / "rounds.jsonl").read_bytes()


def test_single_value_sweep_matches_run(tmp_path):
    base = {"method": "fedecado", **STIFF}
    table = sweep(parse_config({**base, "sweep_param": "gamma", "sweep_values": [1e-3]}), tmp_path)
    single = run_experiment(parse_config({**base, "gamma": 1e-3}))
    assert table["rows"][0]["final_loss"] == single.summary["final_loss"]
    assert table["usable_rate"] == 1.0
    assert (tmp_path / "run_000" / "rounds.jsonl").read_text() == "".join(l + "\n" for l in single.lines)


def test_sweep_records_failures_and_continues():
    cfg = parse_config({"method": "fedavg", **STIFF, "max_rounds": 50, "sweep_param": "client_lr",
                        "sweep_values": [1e-3, 10.0]})
    table = sweep(cfg)
    assert [r["diverged"] for r in table["rows"]] == [False, True]
    assert table["rows"][1]["score"] == 0.0 and table["usable_rate"] == 0.5


def test_usable_rate_examples():
    assert usable_rate([0.8, 0.9, 0.85]) == 1.0
    assert usable_rate([0.9, 0.5]) == 0.5
    assert usable_rate([0.3, 0.3, 0.3]) == 1.0
    assert usable_rate([0.42]) == 1.0
    with pytest.raises(ValueError):
        usable_rate([])


def test_partition_report_histograms():
    rows = partition_report(parse_config({"method": "fedecado", "dataset": "gaussian-blobs",
                                          "clients": 4, "n_samples": 200}))
    assert len(rows) == 4 and sum(r["size"] for r in rows) == 200
    assert all(sum(r["hist"]) == r["size"] for r in rows)
    assert abs(sum(r["weight"] for r in rows) - 1) < 1e-12
