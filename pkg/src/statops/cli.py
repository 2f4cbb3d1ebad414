"""Command-line front door: generation, pipelines and deterministic reports.

Subcommands: gen-trace, discover, diagnose, repair-sim, repair-mine, stats.
Exit codes: 0 success, 1 completed with warnings, 2 input/config error.
Every report embeds the seed and the effective configuration, and all output
is a pure function of (inputs, seed), so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from statops import diagnosis, discovery, repairs, stats, traces

_EXIT_OK = 0
_EXIT_WARN = 1
_EXIT_ERROR = 2


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return _EXIT_ERROR


def _write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data, encoding="utf-8")


def _json_report(payload: dict, config: dict) -> str:
    return json.dumps({"config": config, **payload}, sort_keys=True, indent=2) + "\n"


def _config_comment(config: dict) -> str:
    items = " ".join(f"{k}={config[k]}" for k in sorted(config))
    return f"# {items}\n"


def _cmd_gen_trace(args: argparse.Namespace) -> int:
    spec_path = Path(args.spec)
    if not spec_path.is_file():
        return _fail(f"spec file not found: {spec_path}")
    try:
        spec = traces.parse_synth_spec(spec_path.read_text(encoding="utf-8"))
    except ValueError as exc:
        return _fail(f"bad spec: {exc}")
    if args.seed is not None:  # flag overrides the spec file
        spec = dataclasses.replace(spec, seed=args.seed)
    trace, truth = traces.synth_trace(spec)
    out = Path(args.out)
    _write(out, traces.serialize_trace(trace))
    _write(Path(str(out) + ".truth"), traces.serialize_ground_truth(truth))
    print(f"wrote {out} and {out}.truth (host={spec.host}, seed={spec.seed})")
    return _EXIT_OK


def _pair_rows(host: str, results) -> list[str]:
    rows = []
    for r in results:
        stat = repr(r.ks.statistic) if r.ks else ""
        p = repr(r.ks.p_value) if r.ks else ""
        q = "" if r.insufficient_data else repr(r.q_value)
        rows.append(",".join([
            host, r.input.service, r.input.remote, r.output.service, r.output.remote,
            str(r.n_delays), stat, p, repr(r.log_odds), q,
            str(r.dependent).lower(), str(r.insufficient_data).lower(),
        ]))
    return rows


def _cmd_discover(args: argparse.Namespace) -> int:
    config = discovery.DiscoveryConfig(
        alpha=args.alpha, horizon=args.horizon, min_samples=args.min_samples,
        method=args.method.replace("-", "_"), seed=args.seed,
    )
    per_host = []
    for path in args.traces:
        p = Path(path)
        if not p.is_file():
            return _fail(f"trace file not found: {p}")
        try:
            trace = traces.parse_trace(p.read_text(encoding="utf-8"))
        except traces.TraceFormatError as exc:
            return _fail(f"{p}: {exc}")
        per_host.append((trace.host, discovery.local_dependencies(trace, config)))

    echo = {
        "alpha": args.alpha, "horizon": args.horizon, "method": args.method,
        "min_samples": args.min_samples, "seed": args.seed,
    }
    out_dir = Path(args.out)
    header = "host,input_service,input_remote,output_service,output_remote," \
             "n_delays,statistic,p_value,log_odds,q_value,dependent,insufficient_data"
    lines = [header]
    for host, results in per_host:
        lines.extend(_pair_rows(host, results))
    _write(out_dir / "pairs.csv", _config_comment(echo) + "".join(l + "\n" for l in lines))

    graph = discovery.build_graph(per_host)
    if args.format == "dot":
        comment = "// " + " ".join(f"{k}={echo[k]}" for k in sorted(echo)) + "\n"
        _write(out_dir / "graph.dot", comment.encode() + discovery.export_graph(graph, "dot"))
    else:
        payload = json.loads(discovery.export_graph(graph, "json"))
        _write(out_dir / "graph.json", _json_report(payload, echo))

    warn = any(
        all(r.insufficient_data for r in results) for _, results in per_host
    ) or any(len(results) == 0 for _, results in per_host)
    if warn:
        print("warning: at least one host had no testable channel pairs", file=sys.stderr)
        return _EXIT_WARN
    return _EXIT_OK


def _cmd_diagnose(args: argparse.Namespace) -> int:
    path = Path(args.metrics)
    if not path.is_file():
        return _fail(f"metrics file not found: {path}")
    try:
        dataset = diagnosis.load_metrics_csv(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        return _fail(f"{path}: {exc}")
    actions = [a.strip() for a in args.actions.split(",") if a.strip()]
    unknown = set(actions) - {"train", "signatures", "cluster", "retrieve"}
    if unknown:
        return _fail(f"unknown actions: {sorted(unknown)}")

    labels = diagnosis.label_slo(dataset, diagnosis.SloConfig(args.slo_threshold))
    echo = {
        "slo_threshold": args.slo_threshold, "seed": args.seed, "alpha": args.alpha,
        "clusters": args.clusters, "actions": ",".join(actions),
    }
    out_dir = Path(args.out)

    needs_model = {"train", "signatures", "cluster", "retrieve"} & set(actions)
    model = None
    if needs_model:
        try:
            model = diagnosis.fit_classifier(dataset, labels)
        except ValueError as exc:
            return _fail(str(exc))

    if "train" in actions:
        pred = diagnosis.predict(model, dataset.metrics)
        payload = {
            "accuracy": float(np.mean(pred == labels)),
            "prior": {"compliant": model.prior[0], "violation": model.prior[1]},
            "feature_set": list(model.feature_set),
            "metric_names": list(model.metric_names),
            "n_epochs": dataset.n_epochs,
        }
        _write(out_dir / "model.json", _json_report(payload, echo))

    violation_idx = np.nonzero(labels)[0]
    signatures = [
        diagnosis.signature(model, dataset.metrics[i], epoch=float(dataset.timestamps[i]))
        for i in violation_idx
    ] if model is not None else []

    if "signatures" in actions:
        catalog = diagnosis.SignatureCatalog()
        for sig in signatures:
            catalog.add(sig, annotation="")
        _write(out_dir / "signatures.jsonl", catalog.to_jsonl())

    if "cluster" in actions:
        if len(signatures) < args.clusters:
            return _fail(f"need at least {args.clusters} violation signatures to cluster")
        assign = diagnosis.cluster_signatures(signatures, args.clusters, seed=args.seed)
        cluster_of = {int(violation_idx[i]): int(assign[i]) for i in range(len(signatures))}
        lines = ["ts,art_ms,slo_state,cluster_id"]
        for i in range(dataset.n_epochs):
            state = "violation" if labels[i] else "compliant"
            lines.append(",".join([
                repr(float(dataset.timestamps[i])), repr(float(dataset.art[i])),
                state, str(cluster_of.get(i, -1)),
            ]))
        _write(out_dir / "timeline.csv", _config_comment(echo) + "".join(l + "\n" for l in lines))

    if "retrieve" in actions:
        if not args.catalog:
            return _fail("retrieve requires --catalog")
        catalog_path = Path(args.catalog)
        if not catalog_path.is_file():
            return _fail(f"catalog not found: {catalog_path}")
        catalog = diagnosis.catalog_from_jsonl(catalog_path.read_text(encoding="utf-8"))
        if not catalog.entries:
            return _fail("catalog is empty")
        if args.query_epoch is None:
            return _fail("retrieve requires --query-epoch")
        i = int(np.argmin(np.abs(dataset.timestamps - args.query_epoch)))
        query = diagnosis.signature(model, dataset.metrics[i], epoch=float(dataset.timestamps[i]))
        ranked = diagnosis.retrieve(query, catalog, args.top_k)
        payload = {
            "query_epoch": float(dataset.timestamps[i]),
            "results": [
                {"ts": e.signature.epoch, "annotation": e.annotation, "distance": d}
                for e, d in ranked
            ],
        }
        _write(out_dir / "retrieval.json", _json_report(payload, echo))
    return _EXIT_OK


_POLICIES = {
    "escalation": repairs.escalation_policy,
    "do-nothing": repairs.always_do_nothing,
    "always-replace": repairs.always_replace,
}


def _parse_watchdogs(specs: list[str]) -> tuple[repairs.WatchdogSpec, ...]:
    out = []
    for raw in specs:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ValueError(f"watchdog spec must be NAME:FP:FN, got '{raw}'")
        out.append(repairs.WatchdogSpec(parts[0], float(parts[1]), float(parts[2])))
    return tuple(out)


def _cmd_repair_sim(args: argparse.Namespace) -> int:
    try:
        watchdogs = _parse_watchdogs(args.watchdog) if args.watchdog else (repairs.WatchdogSpec("wd0"),)
        model = repairs.FaultModel(
            transient_rate=args.transient_rate,
            persistent_rate=args.persistent_rate,
            watchdogs=watchdogs,
            warning_rate=args.warning_rate,
        )
    except ValueError as exc:
        return _fail(str(exc))
    log = repairs.simulate(args.machines, model, _POLICIES[args.policy], args.ticks, args.seed)
    out = Path(args.out)
    _write(out, repairs.serialize_repair_log(log))
    _write(Path(str(out) + ".truth"), repairs.serialize_fault_truth(log))
    print(f"wrote {out} and {out}.truth (machines={args.machines}, ticks={args.ticks}, seed={args.seed})")
    return _EXIT_OK


def _cmd_repair_mine(args: argparse.Namespace) -> int:
    path = Path(args.log)
    if not path.is_file():
        return _fail(f"log file not found: {path}")
    try:
        log = repairs.parse_repair_log(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        return _fail(f"{path}: {exc}")
    truth_path = Path(args.truth) if args.truth else Path(str(path) + ".truth")
    if truth_path.is_file():
        log.truth = repairs.parse_fault_truth(truth_path.read_text(encoding="utf-8"))

    echo = {"lookahead": args.lookahead, "downtime_cost": args.downtime_cost}
    out_dir = Path(args.out)
    rates = repairs.estimate_watchdog_fpr(log, lookahead=args.lookahead)
    lines = ["watchdog,n_reports,n_errors,n_suspected_false,estimated_fp_rate,"
             "suspected_per_error,true_fp_rate"]
    for name in sorted(rates):
        r = rates[name]
        lines.append(",".join([
            name, str(r.n_reports), str(r.n_errors), str(r.n_suspected_false),
            repr(r.estimated_fp_rate), repr(r.suspected_per_error),
            "" if r.true_fp_rate is None else repr(r.true_fp_rate),
        ]))
    _write(out_dir / "watchdogs.csv", _config_comment(echo) + "".join(l + "\n" for l in lines))

    cost_model = repairs.CostModel(downtime_cost_per_tick=args.downtime_cost)
    metrics = repairs.evaluate_policy(log, cost_model)
    payload = {
        "availability": metrics.availability,
        "total_cost": metrics.total_cost,
        "mean_time_to_healthy": metrics.mean_time_to_healthy,
    }
    _write(out_dir / "policy.json", _json_report(payload, echo))
    return _EXIT_OK


def _read_floats(line: str) -> list[float]:
    return [float(v) for v in line.split()]


def _cmd_stats(args: argparse.Namespace) -> int:
    text = sys.stdin.read()
    if args.which == "bh":
        try:
            p_values = _read_floats(text)
            selection = stats.bh_select(p_values, args.alpha)
        except ValueError as exc:
            return _fail(str(exc))
        naive = sum(1 for p in p_values if p <= args.alpha)
        expected_fp = stats.expected_false_positives(selection.m, args.alpha)
        payload = {
            "m": selection.m,
            "alpha": selection.alpha,
            "threshold": selection.threshold,
            "n_rejected": len(selection.rejected_indices),
            "rejected_indices": sorted(selection.rejected_indices),
            "q_values": [float(q) for q in selection.q_values],
            "naive_rejections": naive,
            "expected_false_positives": expected_fp,
            "expected_false_proportion": expected_fp / naive if naive else None,
        }
    elif args.which == "ks":
        lines = [l for l in text.splitlines() if l.strip()]
        if len(lines) != 2:
            return _fail("stats ks expects two lines on stdin: sample a, sample b")
        try:
            a, b = _read_floats(lines[0]), _read_floats(lines[1])
            d = stats.ks_statistic(stats.empirical_cdf(a), stats.empirical_cdf(b))
            p = stats.ks_p_value(d, len(a), len(b))
        except ValueError as exc:
            return _fail(str(exc))
        payload = {"statistic": d, "p_value": p, "n_a": len(a), "n_b": len(b)}
    else:
        return _fail(f"unknown stats subcommand '{args.which}'")
    out = _json_report(payload, {"alpha": args.alpha})
    if args.out:
        _write(Path(args.out), out)
    else:
        sys.stdout.write(out)
    return _EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="statops", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="generate a synthetic trace plus ground-truth sidecar")
    p.add_argument("spec", help="generator spec file")
    p.add_argument("--seed", type=int, help="override the spec file's seed")
    p.add_argument("--out", required=True, help="output trace path (sidecar at <out>.truth)")
    p.set_defaults(func=_cmd_gen_trace)

    p = sub.add_parser("discover", help="mine dependency graph from trace files")
    p.add_argument("traces", nargs="+", help="per-host trace files")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--min-samples", type=int, default=10)
    p.add_argument("--method", choices=["ks", "log-odds", "both"], default="ks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["json", "dot"], default="json")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_discover)

    p = sub.add_parser("diagnose", help="train/diagnose SLO violations from a metrics log")
    p.add_argument("metrics", help="metrics CSV (ts,art_ms,<metric...>)")
    p.add_argument("--slo-threshold", type=float, required=True)
    p.add_argument("--actions", default="train,signatures,cluster")
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--catalog", help="signature catalog (JSONL) for retrieve")
    p.add_argument("--query-epoch", type=float, help="epoch timestamp to query for retrieve")
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("repair-sim", help="simulate the fault/repair loop")
    p.add_argument("--machines", type=int, default=20)
    p.add_argument("--ticks", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", choices=sorted(_POLICIES), default="escalation")
    p.add_argument("--transient-rate", type=float, default=0.0)
    p.add_argument("--persistent-rate", type=float, default=0.0)
    p.add_argument("--warning-rate", type=float, default=0.0)
    p.add_argument("--watchdog", action="append", metavar="NAME:FP:FN",
                   help="repeatable watchdog spec (default wd0:0:0)")
    p.add_argument("--out", required=True, help="output log path (sidecar at <out>.truth)")
    p.set_defaults(func=_cmd_repair_sim)

    p = sub.add_parser("repair-mine", help="mine a repair log for watchdog and policy metrics")
    p.add_argument("log", help="repair log file")
    p.add_argument("--truth", help="ground-truth sidecar (default <log>.truth when present)")
    p.add_argument("--lookahead", type=int, default=20)
    p.add_argument("--downtime-cost", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_repair_mine)

    p = sub.add_parser("stats", help="bh/ks primitives on stdin lists, for scripting")
    p.add_argument("which", choices=["bh", "ks"])
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=_cmd_stats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        return _fail(str(exc))


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
