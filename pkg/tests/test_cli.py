from __future__ import annotations

import io
import json
import shutil
import subprocess
import sys

from statops import diagnosis
from statops.cli import main

TRACE_SPEC = """\
kind=trace host=desktop duration=300 seed=11
kind=channel dir=in service=http remote=web01 rate=2.0
kind=channel dir=in service=ldap remote=dc01 rate=2.0
kind=channel dir=out service=sql remote=db01 rate=0.5
kind=channel dir=out service=dns remote=ns01 rate=0.5
kind=dep in_service=http in_remote=web01 out_service=sql out_remote=db01 mean_delay=0.05 prob=0.9
"""


def _write_spec(tmp_path, text=TRACE_SPEC):
    spec = tmp_path / "trace.spec"
    spec.write_text(text, encoding="utf-8")
    return spec


def _metrics_file(tmp_path, seed=0, n_epochs=800):
    ds, cause, _ = diagnosis.synth_metrics(
        n_epochs=n_epochs, n_metrics=9,
        cause_metric_sets=((0, 1, 2), (3, 4, 5), (6, 7, 8)), seed=seed,
    )
    path = tmp_path / "metrics.csv"
    path.write_text(diagnosis.write_metrics_csv(ds), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# gen-trace
# ---------------------------------------------------------------------------


def test_gen_trace_writes_trace_and_truth(tmp_path, capsys):
    spec = _write_spec(tmp_path)
    out = tmp_path / "host.trace"
    assert main(["gen-trace", str(spec), "--out", str(out)]) == 0
    assert out.is_file()
    truth = (tmp_path / "host.trace.truth").read_text()
    assert truth == (
        "kind=dep in_service=http in_remote=web01 out_service=sql out_remote=db01\n"
    )


def test_gen_trace_rerun_bit_identical(tmp_path):
    spec = _write_spec(tmp_path)
    out1, out2 = tmp_path / "a.trace", tmp_path / "b.trace"
    assert main(["gen-trace", str(spec), "--out", str(out1)]) == 0
    assert main(["gen-trace", str(spec), "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_gen_trace_seed_flag_overrides_spec_file(tmp_path):
    spec = _write_spec(tmp_path)
    base, other = tmp_path / "base.trace", tmp_path / "other.trace"
    assert main(["gen-trace", str(spec), "--out", str(base)]) == 0
    assert main(["gen-trace", str(spec), "--seed", "999", "--out", str(other)]) == 0
    assert base.read_bytes() != other.read_bytes()
    again = tmp_path / "again.trace"
    assert main(["gen-trace", str(spec), "--seed", "11", "--out", str(again)]) == 0
    assert base.read_bytes() == again.read_bytes()  # spec file carries seed=11


def test_gen_trace_missing_spec_exits_2(tmp_path, capsys):
    assert main(["gen-trace", str(tmp_path / "nope.spec"), "--out", str(tmp_path / "x")]) == 2
    assert "not found" in capsys.readouterr().err


def test_gen_trace_bad_spec_exits_2(tmp_path, capsys):
    spec = tmp_path / "bad.spec"
    spec.write_text("kind=channel dir=in service=s remote=r rate=1\n")
    assert main(["gen-trace", str(spec), "--out", str(tmp_path / "x")]) == 2


# ---------------------------------------------------------------------------
# discover
# ---------------------------------------------------------------------------


def test_discover_finds_planted_edges(tmp_path):
    spec = _write_spec(tmp_path)
    trace = tmp_path / "host.trace"
    main(["gen-trace", str(spec), "--out", str(trace)])
    out = tmp_path / "report"
    assert main(["discover", str(trace), "--out", str(out), "--seed", "5"]) == 0
    payload = json.loads((out / "graph.json").read_text())
    edges = {(e["from"], e["to"], e["service"]) for e in payload["edges"]}
    assert ("web01", "desktop", "http") in edges
    assert ("desktop", "db01", "sql") in edges
    assert payload["config"]["seed"] == 5
    pairs = (out / "pairs.csv").read_text()
    assert pairs.startswith("#") and "seed=5" in pairs.splitlines()[0]


def test_discover_empty_trace_warns_exit_1(tmp_path):
    trace = tmp_path / "empty.trace"
    trace.write_text("")
    out = tmp_path / "report"
    assert main(["discover", str(trace), "--out", str(out)]) == 1
    payload = json.loads((out / "graph.json").read_text())
    assert payload["edges"] == [] and payload["nodes"] == []


def test_discover_malformed_trace_exit_2(tmp_path, capsys):
    trace = tmp_path / "bad.trace"
    trace.write_text("ts=1.0 host=h remote=x service=http dir=sideways\n")
    assert main(["discover", str(trace), "--out", str(tmp_path / "r")]) == 2
    assert "line 1" in capsys.readouterr().err


def test_discover_log_odds_method(tmp_path):
    spec = _write_spec(tmp_path)
    trace = tmp_path / "host.trace"
    main(["gen-trace", str(spec), "--out", str(trace)])
    out = tmp_path / "report"
    assert main(["discover", str(trace), "--out", str(out),
                 "--method", "log-odds"]) == 0
    payload = json.loads((out / "graph.json").read_text())
    edges = {(e["from"], e["to"], e["service"]) for e in payload["edges"]}
    assert ("web01", "desktop", "http") in edges


def test_discover_dot_output(tmp_path):
    spec = _write_spec(tmp_path)
    trace = tmp_path / "host.trace"
    main(["gen-trace", str(spec), "--out", str(trace)])
    out = tmp_path / "report"
    assert main(["discover", str(trace), "--out", str(out), "--format", "dot"]) == 0
    text = (out / "graph.dot").read_text()
    assert text.startswith("//")
    assert "digraph constellation {" in text


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def test_diagnose_timeline_has_three_clusters(tmp_path):
    metrics = _metrics_file(tmp_path)
    out = tmp_path / "diag"
    code = main([
        "diagnose", str(metrics), "--slo-threshold", "200",
        "--actions", "train,signatures,cluster", "--clusters", "3",
        "--out", str(out), "--seed", "3",
    ])
    assert code == 0
    model = json.loads((out / "model.json").read_text())
    assert model["accuracy"] >= 0.9
    rows = [l for l in (out / "timeline.csv").read_text().splitlines()
            if l and not l.startswith("#")][1:]
    states = {r.split(",")[2] for r in rows}
    assert states == {"compliant", "violation"}
    clusters = {r.split(",")[3] for r in rows if r.split(",")[2] == "violation"}
    assert clusters == {"0", "1", "2"}
    assert all(r.split(",")[3] == "-1" for r in rows if r.split(",")[2] == "compliant")


def test_diagnose_single_class_exit_2(tmp_path, capsys):
    ds, _, _ = diagnosis.synth_metrics(n_epochs=100, n_metrics=4,
                                       cause_metric_sets=((0, 1),), seed=1)
    path = tmp_path / "m.csv"
    path.write_text(diagnosis.write_metrics_csv(ds))
    # a threshold above every ART value leaves a single class
    assert main(["diagnose", str(path), "--slo-threshold", "100000",
                 "--actions", "train", "--out", str(tmp_path / "d")]) == 2
    assert "both classes" in capsys.readouterr().err


def test_diagnose_retrieve_round_trip(tmp_path):
    metrics = _metrics_file(tmp_path, seed=4)
    out = tmp_path / "diag"
    assert main(["diagnose", str(metrics), "--slo-threshold", "200",
                 "--actions", "signatures", "--out", str(out)]) == 0
    catalog = out / "signatures.jsonl"
    assert catalog.is_file()
    first_violation_ts = json.loads(catalog.read_text().splitlines()[0])["ts"]
    code = main([
        "diagnose", str(metrics), "--slo-threshold", "200", "--actions", "retrieve",
        "--catalog", str(catalog), "--query-epoch", str(first_violation_ts),
        "--out", str(out),
    ])
    assert code == 0
    payload = json.loads((out / "retrieval.json").read_text())
    assert len(payload["results"]) == 3
    assert payload["results"][0]["distance"] == 0.0


def test_diagnose_retrieve_empty_catalog_exit_2(tmp_path, capsys):
    metrics = _metrics_file(tmp_path, seed=5, n_epochs=300)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["diagnose", str(metrics), "--slo-threshold", "200",
                 "--actions", "retrieve", "--catalog", str(empty),
                 "--query-epoch", "10", "--out", str(tmp_path / "d")]) == 2
    assert "empty" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# repair-sim / repair-mine
# ---------------------------------------------------------------------------


def test_repair_sim_and_mine_zero_faults(tmp_path):
    log = tmp_path / "repair.log"
    assert main(["repair-sim", "--machines", "4", "--ticks", "50",
                 "--seed", "2", "--out", str(log)]) == 0
    assert log.is_file() and (tmp_path / "repair.log.truth").is_file()
    out = tmp_path / "mine"
    assert main(["repair-mine", str(log), "--out", str(out)]) == 0
    payload = json.loads((out / "policy.json").read_text())
    assert payload["availability"] == 1.0
    assert payload["total_cost"] == 0.0


def test_repair_mine_missing_file_exit_2(tmp_path, capsys):
    assert main(["repair-mine", str(tmp_path / "nope.log"),
                 "--out", str(tmp_path / "m")]) == 2
    assert "not found" in capsys.readouterr().err


def test_repair_sim_bad_watchdog_spec_exit_2(tmp_path, capsys):
    assert main(["repair-sim", "--watchdog", "broken", "--out",
                 str(tmp_path / "x.log")]) == 2


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------


def test_stats_bh_report(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr("sys.stdin", io.StringIO("0.001 0.008 0.039 0.041 0.27 0.60"))
    assert main(["stats", "bh", "--alpha", "0.05"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["rejected_indices"] == [0, 1]
    assert payload["threshold"] == 0.008
    assert payload["m"] == 6


def test_stats_ks_report(monkeypatch, capsys):
    monkeypatch.setattr("sys.stdin", io.StringIO("1 2 3 4\n2 3 4 5\n"))
    assert main(["stats", "ks"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["statistic"] == 0.25
    assert 0 < payload["p_value"] <= 1


def test_stats_bh_bad_input_exit_2(monkeypatch, capsys):
    monkeypatch.setattr("sys.stdin", io.StringIO("0.5 1.7"))
    assert main(["stats", "bh"]) == 2


# ---------------------------------------------------------------------------
# packaging entry points
# ---------------------------------------------------------------------------


def test_console_script_and_module_entry():
    if shutil.which("statops"):
        proc = subprocess.run(["statops", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "gen-trace" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "statops", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "repair-mine" in proc.stdout


# ---------------------------------------------------------------------------
# determinism across reruns
# ---------------------------------------------------------------------------


def _tree_bytes(root):
    return {p.name: p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_full_pipeline_reruns_byte_identical(tmp_path):
    spec = _write_spec(tmp_path)
    trace = tmp_path / "host.trace"
    main(["gen-trace", str(spec), "--out", str(trace)])
    metrics = _metrics_file(tmp_path, seed=7)
    runs = []
    for name in ("run1", "run2"):
        root = tmp_path / name
        assert main(["discover", str(trace), "--out", str(root / "disc"),
                     "--seed", "1"]) == 0
        assert main(["diagnose", str(metrics), "--slo-threshold", "200",
                     "--actions", "train,signatures,cluster",
                     "--out", str(root / "diag"), "--seed", "1"]) == 0
        assert main(["repair-sim", "--machines", "5", "--ticks", "60", "--seed", "1",
                     "--persistent-rate", "0.01",
                     "--out", str(root / "repair.log")]) == 0
        assert main(["repair-mine", str(root / "repair.log"),
                     "--out", str(root / "mine")]) == 0
        runs.append(_tree_bytes(root))
    assert runs[0] == runs[1]
