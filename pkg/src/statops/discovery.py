"""Per-host dependence testing over channel pairs and dependency-graph assembly.

Every (input channel, output channel) pair on a host is tested by comparing
the empirical CDF of its real input->output delays against the CDF of delays
to a virtual random output channel.  KS p-values for all tested pairs on a
host are then pushed through Benjamini-Hochberg selection, which is what
keeps a host with thousands of channel pairs from drowning in false edges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from statops.stats import (
    LogOddsModel,
    TestOutcome,
    bh_select,
    empirical_cdf,
    ks_p_value,
    ks_statistic,
    log_odds_dependence,
)
from statops.traces import ChannelId, HostTrace, delay_samples, virtual_random_delays

__all__ = [
    "DiscoveryConfig",
    "ChannelPairResult",
    "EdgeEvidence",
    "DependencyGraph",
    "local_dependencies",
    "build_graph",
    "graph_diff",
    "export_graph",
    "graph_from_json",
    "reachable",
]

# log Bayes-factor cutoff for method="log_odds": the conventional "strong
# evidence" point.  Configurable; there is no universal threshold.
DEFAULT_LOG_BF_THRESHOLD = math.log(20.0)


@dataclass(frozen=True)
class DiscoveryConfig:
    alpha: float = 0.05
    horizon: float = 1.0
    min_samples: int = 10
    method: str = "ks"  # ks | log_odds | both
    seed: int = 0
    log_bf_threshold: float = DEFAULT_LOG_BF_THRESHOLD
    log_odds_bins: int = 20
    dirichlet_alpha: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")
        if self.method not in ("ks", "log_odds", "both"):
            raise ValueError(f"unknown method '{self.method}'")


@dataclass(frozen=True)
class ChannelPairResult:
    """Dependence evidence for one (input, output) channel pair.

    Pairs with fewer than min_samples paired delays (or no usable virtual
    sample) are never tested: ks is None, q_value is NaN and
    insufficient_data is set.
    """

    input: ChannelId
    output: ChannelId
    n_delays: int
    ks: TestOutcome | None
    log_odds: float
    q_value: float
    dependent: bool
    insufficient_data: bool


def local_dependencies(trace: HostTrace, config: DiscoveryConfig) -> list[ChannelPairResult]:
    """Test every input x output channel pair on one host.

    KS p-values of all tested pairs go through bh_select at config.alpha;
    a pair is dependent when its q-value clears alpha (method "ks"), when its
    log Bayes factor clears the threshold (method "log_odds"), or both
    (method "both").  Deterministic per (trace, config).
    """
    inputs = sorted(c for c in trace.channels if c.direction == "in")
    outputs = sorted(c for c in trace.channels if c.direction == "out")
    rng = np.random.default_rng(config.seed)
    duration = trace.duration
    model = LogOddsModel(config.horizon, config.log_odds_bins, config.dirichlet_alpha)

    pairs: list[tuple[ChannelId, ChannelId, np.ndarray, np.ndarray | None]] = []
    for cin in inputs:
        for cout in outputs:
            virtual_seed = int(rng.integers(0, 2**63))
            delays = delay_samples(trace.channels[cin], trace.channels[cout], config.horizon)
            virtual = None
            if delays.size >= config.min_samples and duration > 0:
                virtual = virtual_random_delays(
                    trace.channels[cin], trace.channels[cout].times.size,
                    duration, config.horizon, virtual_seed,
                )
                if virtual.size == 0:
                    virtual = None
            pairs.append((cin, cout, delays, virtual))

    tested = [i for i, (_, _, _, virtual) in enumerate(pairs) if virtual is not None]
    p_values = []
    outcomes: dict[int, TestOutcome] = {}
    for i in tested:
        _, _, delays, virtual = pairs[i]
        d = ks_statistic(empirical_cdf(delays), empirical_cdf(virtual))
        p = ks_p_value(d, delays.size, virtual.size)
        outcomes[i] = TestOutcome(
            statistic=d, p_value=p, n_a=int(delays.size), n_b=int(virtual.size),
            significant=p <= config.alpha,
        )
        p_values.append(p)
    selection = bh_select(p_values, config.alpha) if p_values else None
    position = {i: pos for pos, i in enumerate(tested)}

    results = []
    for i, (cin, cout, delays, virtual) in enumerate(pairs):
        log_bf = log_odds_dependence(delays, model)
        if i not in outcomes:
            results.append(ChannelPairResult(
                input=cin, output=cout, n_delays=int(delays.size), ks=None,
                log_odds=log_bf, q_value=float("nan"), dependent=False,
                insufficient_data=True,
            ))
            continue
        pos = position[i]
        q = float(selection.q_values[pos])
        bh_dependent = pos in selection.rejected_indices
        bf_dependent = log_bf >= config.log_bf_threshold
        if config.method == "ks":
            dependent = bh_dependent
        elif config.method == "log_odds":
            dependent = bf_dependent
        else:
            dependent = bh_dependent and bf_dependent
        results.append(ChannelPairResult(
            input=cin, output=cout, n_delays=int(delays.size), ks=outcomes[i],
            log_odds=log_bf, q_value=q, dependent=dependent, insufficient_data=False,
        ))
    return results


@dataclass(frozen=True)
class EdgeEvidence:
    q_value: float
    n_delays: int
    statistic: float


@dataclass(eq=True)
class DependencyGraph:
    """Directed host/service dependency graph with per-edge test evidence."""

    nodes: frozenset[str]
    edges: dict[tuple[str, str, str], EdgeEvidence]  # (from, to, service)


def build_graph(
    per_host: Sequence[tuple[str, Sequence[ChannelPairResult]]]
) -> DependencyGraph:
    """Merge per-host dependent pairs into one graph.

    A dependent pair with input remote x (service s_in) and output remote y
    (service s_out) on host h contributes edges x -(s_in)-> h and
    h -(s_out)-> y.  Duplicate edges keep the strongest (smallest-q) evidence,
    so merging the same results twice is a no-op.
    """
    hosts = [h for h, _ in per_host]
    if len(hosts) != len(set(hosts)):
        raise ValueError("host ids must be distinct")
    nodes: set[str] = set()
    edges: dict[tuple[str, str, str], EdgeEvidence] = {}

    def add_edge(key: tuple[str, str, str], ev: EdgeEvidence) -> None:
        kept = edges.get(key)
        if kept is None or ev.q_value < kept.q_value:
            edges[key] = ev

    for host, results in per_host:
        for r in results:
            if not r.dependent:
                continue
            nodes.update((host, r.input.remote, r.output.remote))
            stat = r.ks.statistic if r.ks is not None else float("nan")
            ev = EdgeEvidence(q_value=r.q_value, n_delays=r.n_delays, statistic=stat)
            add_edge((r.input.remote, host, r.input.service), ev)
            add_edge((host, r.output.remote, r.output.service), ev)
    return DependencyGraph(nodes=frozenset(nodes), edges=edges)


def graph_diff(
    before: DependencyGraph, after: DependencyGraph
) -> tuple[set[tuple[str, str, str]], set[tuple[str, str, str]]]:
    """(added, removed) edge triples between two graphs; evidence is ignored."""
    b, a = set(before.edges), set(after.edges)
    return a - b, b - a


def export_graph(g: DependencyGraph, format: str = "dot") -> bytes:
    """Render a graph as DOT or JSON, deterministically sorted."""
    if format == "dot":
        lines = ["digraph constellation {"]
        for node in sorted(g.nodes):
            lines.append(f'  "{node}";')
        for (src, dst, service) in sorted(g.edges):
            ev = g.edges[(src, dst, service)]
            lines.append(
                f'  "{src}" -> "{dst}" [service="{service}", q_value={ev.q_value!r}];'
            )
        lines.append("}")
        return ("\n".join(lines) + "\n").encode("utf-8")
    if format == "json":
        payload = {
            "nodes": sorted(g.nodes),
            "edges": [
                {
                    "from": src,
                    "to": dst,
                    "service": service,
                    "q_value": g.edges[(src, dst, service)].q_value,
                    "n_delays": g.edges[(src, dst, service)].n_delays,
                    "statistic": g.edges[(src, dst, service)].statistic,
                }
                for (src, dst, service) in sorted(g.edges)
            ],
        }
        return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")
    raise ValueError(f"unknown format '{format}'")


def graph_from_json(data: bytes | str) -> DependencyGraph:
    """Inverse of export_graph(..., "json")."""
    payload = json.loads(data)
    edges = {
        (e["from"], e["to"], e["service"]): EdgeEvidence(
            q_value=float(e["q_value"]),
            n_delays=int(e["n_delays"]),
            statistic=float(e["statistic"]),
        )
        for e in payload["edges"]
    }
    return DependencyGraph(nodes=frozenset(payload["nodes"]), edges=edges)


def reachable(g: DependencyGraph, start: str) -> frozenset[str]:
    """Nodes reachable from ``start`` via one or more directed edges."""
    adjacency: dict[str, set[str]] = {}
    for src, dst, _ in g.edges:
        adjacency.setdefault(src, set()).add(dst)
    seen: set[str] = set()
    frontier = list(adjacency.get(start, ()))
    while frontier:
        node = frontier.pop()
        if node in seen:
            continue
        seen.add(node)
        frontier.extend(adjacency.get(node, ()))
    return frozenset(seen)
