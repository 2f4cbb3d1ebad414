from __future__ import annotations

import math

import pytest

from statops.discovery import (
    ChannelPairResult,
    DependencyGraph,
    DiscoveryConfig,
    EdgeEvidence,
    build_graph,
    export_graph,
    graph_diff,
    graph_from_json,
    local_dependencies,
    reachable,
)
from statops.stats import TestOutcome as KsOutcome
from statops.traces import (
    ChannelId,
    ChannelSpec,
    DependencySpec,
    HostTrace,
    SynthSpec,
    synth_trace,
)


def planted_host_spec(seed, n_in=10, n_out=10, n_deps=10, duration=500.0,
                      in_rate=2.0, out_rate=1.0, prob=0.9, mean_delay=0.05):
    """n_in x n_out candidate pairs with the first n_deps diagonal pairs planted."""
    ins = [ChannelSpec(ChannelId("in", "http", f"src{i:02d}"), in_rate) for i in range(n_in)]
    outs = [ChannelSpec(ChannelId("out", "sql", f"dst{j:02d}"), out_rate) for j in range(n_out)]
    deps = tuple(
        DependencySpec(ins[i].id, outs[i].id, mean_delay, prob) for i in range(n_deps)
    )
    return SynthSpec("h", duration, tuple(ins + outs), deps, seed)


def null_host_spec(seed, n_in=10, n_out=20, duration=240.0):
    ins = [ChannelSpec(ChannelId("in", "http", f"src{i:02d}"), 2.0) for i in range(n_in)]
    outs = [ChannelSpec(ChannelId("out", "dns", f"dst{j:02d}"), 1.0) for j in range(n_out)]
    return SynthSpec("h", duration, tuple(ins + outs), (), seed)


# ---------------------------------------------------------------------------
# local dependence testing
# ---------------------------------------------------------------------------


def test_empty_trace_yields_empty_result():
    assert local_dependencies(HostTrace("h", {}), DiscoveryConfig()) == []


def test_planted_dependency_detected():
    trace, truth = synth_trace(planted_host_spec(seed=1, n_in=3, n_out=3, n_deps=1,
                                                 duration=300.0))
    results = local_dependencies(trace, DiscoveryConfig(alpha=0.05, seed=1))
    planted = [r for r in results if (r.input, r.output) in truth]
    assert planted and all(r.dependent for r in planted)


def test_dependent_implies_q_below_alpha():
    trace, _ = synth_trace(planted_host_spec(seed=2, n_in=4, n_out=4, n_deps=2,
                                             duration=300.0))
    config = DiscoveryConfig(alpha=0.05, seed=2)
    for r in local_dependencies(trace, config):
        if r.dependent:
            assert r.q_value <= config.alpha
        if r.insufficient_data:
            assert not r.dependent and r.ks is None and math.isnan(r.q_value)


def test_local_dependencies_deterministic():
    trace, _ = synth_trace(planted_host_spec(seed=3, n_in=3, n_out=3, n_deps=1,
                                             duration=200.0))
    config = DiscoveryConfig(alpha=0.05, seed=9)
    assert local_dependencies(trace, config) == local_dependencies(trace, config)


def test_insufficient_pairs_are_flagged_not_tested():
    # one output channel far too sparse to reach min_samples
    ins = (ChannelSpec(ChannelId("in", "http", "src"), 2.0),)
    outs = (ChannelSpec(ChannelId("out", "sql", "dst"), 0.01),)
    trace, _ = synth_trace(SynthSpec("h", 100.0, ins + outs, (), seed=4))
    results = local_dependencies(trace, DiscoveryConfig(min_samples=50, seed=0))
    assert results and all(r.insufficient_data for r in results)


def test_method_log_odds_uses_bayes_threshold():
    trace, truth = synth_trace(planted_host_spec(seed=5, n_in=3, n_out=3, n_deps=1,
                                                 duration=300.0))
    results = local_dependencies(trace, DiscoveryConfig(method="log_odds", seed=5))
    for r in results:
        if not r.insufficient_data:
            assert r.dependent == (r.log_odds >= math.log(20.0))
    assert any(r.dependent for r in results if (r.input, r.output) in truth)


def test_method_both_requires_both_signals():
    trace, _ = synth_trace(planted_host_spec(seed=6, n_in=3, n_out=3, n_deps=1,
                                             duration=300.0))
    ks = {(r.input, r.output): r.dependent
          for r in local_dependencies(trace, DiscoveryConfig(method="ks", seed=6))}
    bf = {(r.input, r.output): r.dependent
          for r in local_dependencies(trace, DiscoveryConfig(method="log_odds", seed=6))}
    both = {(r.input, r.output): r.dependent
            for r in local_dependencies(trace, DiscoveryConfig(method="both", seed=6))}
    for key, flag in both.items():
        assert flag == (ks[key] and bf[key])


def test_sparse_planted_dependency_still_detected():
    # tens of delay samples with a strong effect: detection rate >= 0.5
    detected = 0
    total = 0
    for seed in range(50):
        ins = [ChannelSpec(ChannelId("in", "http", f"src{i:02d}"), 2.0) for i in range(10)]
        outs = [ChannelSpec(ChannelId("out", "dns", f"dst{j:02d}"), 1.0) for j in range(9)]
        planted_out = ChannelSpec(ChannelId("out", "sql", "planted"), 0.01)
        dep = DependencySpec(ins[0].id, planted_out.id, mean_delay=0.05, response_prob=0.027)
        spec = SynthSpec("h", 500.0, tuple(ins + outs + [planted_out]), (dep,), seed)
        trace, truth = synth_trace(spec)
        for r in local_dependencies(trace, DiscoveryConfig(alpha=0.05, seed=seed)):
            if (r.input, r.output) in truth:
                total += 1
                detected += r.dependent
    assert total == 50
    assert detected / total >= 0.5


# ---------------------------------------------------------------------------
# graph building, diffing, export
# ---------------------------------------------------------------------------


def _result(in_remote, out_remote, q=0.001, dependent=True, in_service="http",
            out_service="sql", n=50, stat=0.5):
    return ChannelPairResult(
        input=ChannelId("in", in_service, in_remote),
        output=ChannelId("out", out_service, out_remote),
        n_delays=n,
        ks=KsOutcome(statistic=stat, p_value=q / 10, n_a=n, n_b=n, significant=True),
        log_odds=10.0,
        q_value=q,
        dependent=dependent,
        insufficient_data=False,
    )


def test_build_graph_empty():
    g = build_graph([])
    assert g.nodes == frozenset() and g.edges == {}


def test_build_graph_single_dependent_pair():
    g = build_graph([("h", [_result("x", "y")])])
    assert g.nodes == {"h", "x", "y"}
    assert set(g.edges) == {("x", "h", "http"), ("h", "y", "sql")}


def test_build_graph_ignores_non_dependent():
    g = build_graph([("h", [_result("x", "y", dependent=False)])])
    assert g.nodes == frozenset() and g.edges == {}


def test_build_graph_keeps_strongest_evidence_and_is_idempotent():
    results = [_result("x", "y", q=0.01), _result("x", "z", q=0.002)]
    g1 = build_graph([("h", results)])
    # edge x->h comes from both pairs; the smaller q wins
    assert g1.edges[("x", "h", "http")].q_value == 0.002
    g2 = build_graph([("h", results), ("h2", [])])
    assert g1.edges == g2.edges
    # merging identical host results twice changes nothing
    with pytest.raises(ValueError):
        build_graph([("h", results), ("h", results)])


def test_constellation_shape_from_desktop_trace():
    # one desktop with 5 planted server dependencies fans out around the root
    ins = [ChannelSpec(ChannelId("in", f"svc{i}", f"server{i}"), 2.0) for i in range(5)]
    outs = [ChannelSpec(ChannelId("out", f"rsvc{i}", f"backend{i}"), 1.0) for i in range(5)]
    deps = tuple(DependencySpec(ins[i].id, outs[i].id, 0.05, 0.9) for i in range(5))
    trace, truth = synth_trace(SynthSpec("desktop", 400.0, tuple(ins + outs), deps, seed=7))
    results = local_dependencies(trace, DiscoveryConfig(alpha=0.05, seed=7))
    g = build_graph([("desktop", results)])
    assert "desktop" in g.nodes
    assert all("desktop" in (src, dst) for src, dst, _ in g.edges)
    planted_edges = {(f"server{i}", "desktop", f"svc{i}") for i in range(5)}
    planted_edges |= {("desktop", f"backend{i}", f"rsvc{i}") for i in range(5)}
    assert set(g.edges) == planted_edges


def test_graph_diff():
    g1 = build_graph([("h", [_result("x", "y")])])
    g2 = build_graph([("h", [_result("x", "y"), _result("x", "z", out_service="dns")])])
    assert graph_diff(g1, g1) == (set(), set())
    added, removed = graph_diff(g1, g2)
    assert added == {("h", "z", "dns")} and removed == set()
    added, removed = graph_diff(g2, g1)
    assert added == set() and removed == {("h", "z", "dns")}


def test_export_empty_dot():
    g = DependencyGraph(nodes=frozenset(), edges={})
    assert export_graph(g, "dot").decode().split() == ["digraph", "constellation", "{", "}"]


def test_export_dot_sorted_edges():
    g = build_graph([("h", [_result("x", "y"), _result("a", "b", out_service="dns")])])
    text = export_graph(g, "dot").decode()
    edge_lines = [l for l in text.splitlines() if "->" in l]
    assert len(edge_lines) == 4
    assert edge_lines == sorted(edge_lines)
    assert 'service="http"' in text and "q_value=" in text


def test_export_json_round_trips():
    g = build_graph([("h", [_result("x", "y"), _result("q", "z", q=0.004)])])
    assert graph_from_json(export_graph(g, "json")) == g


def test_export_rejects_unknown_format():
    with pytest.raises(ValueError):
        export_graph(DependencyGraph(frozenset(), {}), "svg")


def test_reachable_transitive():
    g = DependencyGraph(
        nodes=frozenset({"a", "b", "c", "d"}),
        edges={
            ("a", "b", "s"): EdgeEvidence(0.01, 10, 0.5),
            ("b", "c", "s"): EdgeEvidence(0.01, 10, 0.5),
            ("d", "a", "s"): EdgeEvidence(0.01, 10, 0.5),
        },
    )
    assert reachable(g, "a") == {"b", "c"}
    assert reachable(g, "d") == {"a", "b", "c"}
    assert reachable(g, "c") == frozenset()
