"""Command line behavior: outputs, report purity, and exit codes."""

import json

import pytest

from oppsim.cli import EXIT_CONFIG, EXIT_OK, EXIT_VALIDATION, main
from oppsim.experiments import (
    ExperimentConfig,
    rank_summary_from_rows,
    rows_from_csv,
    summary_from_rows,
)

CONFIG = {
    "n_nodes": 10,
    "duration": 4000.0,
    "warmup": 400.0,
    "request_gap": [30.0, 50.0],
    "io_size_bytes": 40000.0,
    "service_kinds": [[0, 4, 75.0], [4, 8, 75.0], [0, 8, 75.0]],
    "service_density": 0.5,
    "policies": ["mev", "afir", "ato", "ran"],
    "seeds": [1, 2],
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(CONFIG), encoding="utf-8")
    return str(path)


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def test_simulate_writes_reports(config_path, tmp_path):
    out = tmp_path / "out"
    rc = main(["simulate", config_path, "--out-dir", str(out),
               "--seed", "1", "--policy", "mev", "--quiet"])
    assert rc == EXIT_OK
    summary = read_json(out / "summary.json")
    assert set(summary["policies"]) == {"mev"}
    assert summary["config"]["seeds"] == [1]
    block = summary["policies"]["mev"]
    assert block["n_completed"] > 0
    assert block["ci95_halfwidth"] is None  # single replication
    rows = rows_from_csv((out / "requests.csv").read_text(encoding="utf-8"))
    assert {r.policy for r in rows} == {"mev"}
    assert {r.seed for r in rows} == {1}


def test_summary_is_pure_function_of_csv_and_config(config_path, tmp_path):
    out = tmp_path / "out"
    rc = main(["compare", config_path, "--out-dir", str(out), "--quiet"])
    assert rc == EXIT_OK
    stored = read_json(out / "summary.json")
    cfg = ExperimentConfig.from_dict(stored.pop("config"))
    rows = rows_from_csv((out / "requests.csv").read_text(encoding="utf-8"))
    recomputed = json.loads(json.dumps(summary_from_rows(rows, cfg)))
    assert recomputed == stored


def test_compare_reports_win_fractions_and_bias(config_path, tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["compare", config_path, "--out-dir", str(out)])
    assert rc == EXIT_OK
    summary = read_json(out / "summary.json")
    assert sum(summary["pct_best"].values()) == pytest.approx(100.0)
    assert summary["oracle_best"]["policies"] == ["afir", "ran", "ato"]
    bias = read_json(out / "bias_report.json")
    assert bias["overall"]["n_requests"] > 0
    assert set(bias["per_seed"]) == {"1", "2"}
    text = capsys.readouterr().out
    assert "best-of(afir+ran+ato)" in text


def test_compare_requires_two_policies(config_path, tmp_path):
    rc = main(["compare", config_path, "--out-dir", str(tmp_path / "x"),
               "--policy", "mev", "--quiet"])
    assert rc == EXIT_CONFIG


def test_cli_overrides_reach_the_config(config_path, tmp_path):
    out = tmp_path / "out"
    rc = main(["simulate", config_path, "--out-dir", str(out), "--quiet",
               "--seed", "3", "--policy", "afir",
               "--io-size", "80000", "--cpu-max", "2"])
    assert rc == EXIT_OK
    stored = read_json(out / "summary.json")["config"]
    assert stored["seeds"] == [3]
    assert stored["policies"] == ["afir"]
    assert stored["io_size_bytes"] == 80000.0
    assert stored["cpu_m_max"] == 2


def test_rank_eval_writes_rank_table(config_path, tmp_path):
    out = tmp_path / "out"
    rc = main(["rank-eval", config_path, "--out-dir", str(out),
               "--seed", "1", "--top-k", "3", "--quiet"])
    assert rc == EXIT_OK
    summary = read_json(out / "summary.json")
    assert summary["top_k"] == 3
    assert sum(summary["rank_fractions"]) == pytest.approx(1.0)
    rows = rows_from_csv((out / "requests.csv").read_text(encoding="utf-8"))
    cfg = ExperimentConfig.from_dict(summary["config"])
    recomputed = rank_summary_from_rows(rows, cfg, top_k=3)
    stored = dict(summary)
    stored.pop("config")
    assert json.loads(json.dumps(recomputed)) == stored


def test_exit_code_two_on_bad_config(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    assert main(["simulate", str(broken), "--quiet",
                 "--out-dir", str(tmp_path / "o1")]) == EXIT_CONFIG

    incomplete = tmp_path / "incomplete.json"
    incomplete.write_text(json.dumps({"duration": 10.0}), encoding="utf-8")
    assert main(["simulate", str(incomplete), "--quiet",
                 "--out-dir", str(tmp_path / "o2")]) == EXIT_CONFIG

    missing = str(tmp_path / "does_not_exist.json")
    assert main(["simulate", missing, "--quiet",
                 "--out-dir", str(tmp_path / "o3")]) == EXIT_CONFIG

    not_object = tmp_path / "list.json"
    not_object.write_text("[1, 2]", encoding="utf-8")
    assert main(["simulate", str(not_object), "--quiet",
                 "--out-dir", str(tmp_path / "o4")]) == EXIT_CONFIG


def test_validate_passes_and_writes_report(tmp_path, capsys):
    report = tmp_path / "report.json"
    rc = main(["validate", "--points", "2", "--trials", "30000",
               "--exact-only", "--seed", "11", "--quiet",
               "--json-out", str(report)])
    assert rc == EXIT_OK
    assert "RESULT: PASS" in capsys.readouterr().out
    payload = read_json(report)
    assert payload["ok"] is True


def test_validate_catches_a_corrupted_formula(capsys):
    rc = main(["validate", "--points", "2", "--trials", "30000",
               "--exact-only", "--seed", "11", "--quiet",
               "--corrupt", "wait:1.2"])
    assert rc == EXIT_VALIDATION
    assert "RESULT: FAIL" in capsys.readouterr().out


def test_validate_rejects_unknown_quantity(capsys):
    rc = main(["validate", "--points", "1", "--trials", "1000",
               "--exact-only", "--quiet", "--corrupt", "nonsense"])
    assert rc == EXIT_CONFIG


def test_trace_stats_from_file_and_config(config_path, tmp_path, capsys):
    from oppsim.experiments import build_trace
    from oppsim.traceio import serialize_trace

    cfg = ExperimentConfig.from_dict(CONFIG)
    trace_path = tmp_path / "trace.csv"
    with open(trace_path, "w", encoding="utf-8") as fh:
        serialize_trace(build_trace(cfg, 1), fh)

    json_out = tmp_path / "stats.json"
    rc = main(["trace-stats", "--trace", str(trace_path),
               "--json-out", str(json_out)])
    assert rc == EXIT_OK
    from_file = read_json(json_out)
    assert from_file["parse"]["drops"] == 0
    capsys.readouterr()

    rc = main(["trace-stats", "--config", config_path, "--seed", "1"])
    assert rc == EXIT_OK
    synthetic = json.loads(capsys.readouterr().out)
    assert synthetic["stats"] == from_file["stats"]


def test_trace_stats_bad_file_exits_two(tmp_path):
    assert main(["trace-stats",
                 "--trace", str(tmp_path / "nope.csv")]) == EXIT_CONFIG
