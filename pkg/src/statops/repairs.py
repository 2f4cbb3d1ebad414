"""Fault-detection and repair-loop simulation plus log mining.

Watchdogs probe machines each tick and report OK / Warning / Error.  The
device manager holds a machine in error as soon as any watchdog reports
Error; Warning never counts against a machine.  A machine in error moves to
the Failure state and is assigned a recovery action (Reboot, ReImage,
Replace or DoNothing) by the active policy; when the action's latency has
elapsed and the reports are clean it returns to Healthy.  A repair that
elapses while the error persists escalates: the policy is consulted again
with the grown repair history, which is how a persistent fault walks up the
Reboot -> ReImage -> Replace ladder.

Per tick and machine the simulator logs reports, assigned state and any
action issued; the true fault status is kept in a separate ground-truth
channel that mining code must not rely on.

Log lines: ``tick=<int> machine=<id> state=<Healthy|Failure> action=<action|->
reports=<wd:status;...>``; the ground-truth sidecar uses
``tick=<int> machine=<id> truth=<ok|transient|persistent>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "WatchdogStatus",
    "RepairAction",
    "MachineHealth",
    "WatchdogReport",
    "MachineState",
    "WatchdogSpec",
    "FaultModel",
    "LogEntry",
    "RepairLog",
    "CostModel",
    "PolicyMetrics",
    "WatchdogRateEstimate",
    "error_predicate",
    "escalation_policy",
    "always_do_nothing",
    "always_replace",
    "device_manager_step",
    "simulate",
    "estimate_watchdog_fpr",
    "evaluate_policy",
    "serialize_repair_log",
    "parse_repair_log",
    "serialize_fault_truth",
    "parse_fault_truth",
]


class WatchdogStatus(Enum):
    OK = "OK"
    WARNING = "Warning"
    ERROR = "Error"


class RepairAction(Enum):
    REBOOT = "Reboot"
    REIMAGE = "ReImage"
    REPLACE = "Replace"
    DO_NOTHING = "DoNothing"


class MachineHealth(Enum):
    HEALTHY = "Healthy"
    FAILURE = "Failure"


@dataclass(frozen=True)
class WatchdogReport:
    time: int
    watchdog: str
    machine: str
    status: WatchdogStatus


@dataclass
class MachineState:
    """Device-manager view of one machine.  pending_action is present exactly
    while the machine sits in the Failure state."""

    state: MachineHealth = MachineHealth.HEALTHY
    pending_action: RepairAction | None = None
    pending_since: int | None = None
    history: list[tuple[int, RepairAction]] = field(default_factory=list)


@dataclass(frozen=True)
class WatchdogSpec:
    name: str
    false_positive_rate: float = 0.0
    false_negative_rate: float = 0.0

    def __post_init__(self) -> None:
        for rate in (self.false_positive_rate, self.false_negative_rate):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"watchdog rates must lie in [0, 1), got {rate}")


def _default_efficacy() -> dict[RepairAction, float]:
    # Reboot clears transients only (they clear themselves); ReImage has a
    # coin-flip shot at a persistent fault; Replace always works.
    return {
        RepairAction.REBOOT: 0.0,
        RepairAction.REIMAGE: 0.5,
        RepairAction.REPLACE: 1.0,
        RepairAction.DO_NOTHING: 0.0,
    }


def _default_latency() -> dict[RepairAction, int]:
    return {
        RepairAction.REBOOT: 1,
        RepairAction.REIMAGE: 3,
        RepairAction.REPLACE: 5,
        RepairAction.DO_NOTHING: 1,
    }


@dataclass(frozen=True)
class FaultModel:
    """Fault arrival, sensing and repair parameters for the simulator."""

    transient_rate: float = 0.0  # per machine-tick; clears itself after 1 tick
    persistent_rate: float = 0.0  # per machine-tick; persists until repaired
    watchdogs: tuple[WatchdogSpec, ...] = (WatchdogSpec("wd0"),)
    repair_efficacy: Mapping[RepairAction, float] = field(default_factory=_default_efficacy)
    repair_latency: Mapping[RepairAction, int] = field(default_factory=_default_latency)
    warning_rate: float = 0.0  # chance a non-Error report reads Warning

    def __post_init__(self) -> None:
        for rate in (self.transient_rate, self.persistent_rate, self.warning_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"rates must lie in [0, 1], got {rate}")
        if not self.watchdogs:
            raise ValueError("need at least one watchdog")
        names = [w.name for w in self.watchdogs]
        if len(names) != len(set(names)):
            raise ValueError("watchdog names must be distinct")
        # partial overrides keep defaults for the remaining actions
        object.__setattr__(self, "repair_efficacy",
                           {**_default_efficacy(), **dict(self.repair_efficacy)})
        object.__setattr__(self, "repair_latency",
                           {**_default_latency(), **dict(self.repair_latency)})
        for action in RepairAction:
            if not 0.0 <= self.repair_efficacy[action] <= 1.0:
                raise ValueError("repair efficacies must lie in [0, 1]")
            if self.repair_latency[action] < 1:
                raise ValueError("repair latencies must be >= 1 tick")


@dataclass(frozen=True)
class LogEntry:
    tick: int
    machine: str
    reports: tuple[WatchdogReport, ...]
    state: MachineHealth
    action: RepairAction | None  # action issued this tick, if any


@dataclass(eq=False)
class RepairLog:
    entries: list[LogEntry]
    # Simulator-only ground truth, kept separable from the mined log.
    truth: dict[tuple[int, str], str] | None = None


Policy = Callable[[Sequence[tuple[int, RepairAction]], bool], RepairAction]


def error_predicate(reports: Sequence[WatchdogReport]) -> bool:
    """True iff any watchdog reports Error.  All OK/Warning (or no reports at
    all) means the machine is not in error."""
    if reports:
        first = reports[0]
        for r in reports:
            if r.machine != first.machine or r.time != first.time:
                raise ValueError("reports must share one machine and tick")
    return any(r.status is WatchdogStatus.ERROR for r in reports)


def escalation_policy(
    history: Sequence[tuple[int, RepairAction]], in_error: bool
) -> RepairAction:
    """Escalate with the recent repair history: first error gets a Reboot,
    the next a ReImage, anything beyond that a Replace."""
    if not in_error:
        return RepairAction.DO_NOTHING
    prior = len(history)
    if prior == 0:
        return RepairAction.REBOOT
    if prior == 1:
        return RepairAction.REIMAGE
    return RepairAction.REPLACE


def always_do_nothing(history: Sequence[tuple[int, RepairAction]], in_error: bool) -> RepairAction:
    return RepairAction.DO_NOTHING


def always_replace(history: Sequence[tuple[int, RepairAction]], in_error: bool) -> RepairAction:
    return RepairAction.REPLACE if in_error else RepairAction.DO_NOTHING


def device_manager_step(
    machines: dict[str, MachineState],
    reports: Sequence[WatchdogReport],
    policy: Policy,
    tick: int,
    latency: Mapping[RepairAction, int] | None = None,
    window: int = 100,
) -> dict[str, RepairAction]:
    """Advance every machine one tick from a batch of watchdog reports.

    Healthy machines found in error move to Failure and get a policy action.
    Failed machines whose repair latency has elapsed return to Healthy when
    their reports are clean, and otherwise escalate to a fresh policy action.
    Returns the actions issued this tick.
    """
    if latency is None:
        latency = _default_latency()
    by_machine: dict[str, list[WatchdogReport]] = {}
    for r in reports:
        if r.machine not in machines:
            raise ValueError(f"unknown machine id '{r.machine}'")
        by_machine.setdefault(r.machine, []).append(r)

    issued: dict[str, RepairAction] = {}
    for mid in sorted(machines):
        ms = machines[mid]
        in_error = error_predicate(by_machine.get(mid, ()))
        recent = [(t, a) for t, a in ms.history if t >= tick - window]
        if ms.state is MachineHealth.HEALTHY:
            if in_error:
                action = policy(recent, True)
                ms.state = MachineHealth.FAILURE
                ms.pending_action = action
                ms.pending_since = tick
                ms.history.append((tick, action))
                issued[mid] = action
        else:
            due = tick >= ms.pending_since + latency[ms.pending_action]
            if due and not in_error:
                ms.state = MachineHealth.HEALTHY
                ms.pending_action = None
                ms.pending_since = None
            elif due:
                action = policy(recent, True)
                ms.pending_action = action
                ms.pending_since = tick
                ms.history.append((tick, action))
                issued[mid] = action
    return issued


def _machine_ids(fleet: int) -> list[str]:
    width = max(2, len(str(max(fleet - 1, 0))))
    return [f"m{i:0{width}d}" for i in range(fleet)]


def simulate(
    fleet: int,
    fault_model: FaultModel,
    policy: Policy,
    horizon: int,
    seed: int,
    policy_window: int = 100,
) -> RepairLog:
    """Run the watchdog / device-manager loop for ``horizon`` ticks.

    Fault arrivals, watchdog noise and repair outcomes are drawn from three
    independent substreams of ``seed``, so policies can be compared on
    identical fault arrivals.  Deterministic per seed.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if fleet < 1:
        raise ValueError("fleet must be >= 1")
    rng_faults, rng_reports, rng_repairs = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)
    )
    ids = _machine_ids(fleet)
    machines = {mid: MachineState() for mid in ids}
    persistent = {mid: False for mid in ids}
    transient = {mid: False for mid in ids}
    entries: list[LogEntry] = []
    truth: dict[tuple[int, str], str] = {}

    for tick in range(horizon):
        # Ground-truth update: expire transients, then sample new faults with
        # a fixed number of draws per machine-tick (keeps arrivals identical
        # across policies under one seed).
        for mid in ids:
            transient[mid] = False
            u_trans, u_pers = rng_faults.random(2)
            if u_trans < fault_model.transient_rate:
                transient[mid] = True
            if not persistent[mid] and u_pers < fault_model.persistent_rate:
                persistent[mid] = True

        # Repairs whose latency elapses now get their efficacy roll.
        for mid in ids:
            ms = machines[mid]
            if ms.state is MachineHealth.FAILURE and tick >= ms.pending_since + \
                    fault_model.repair_latency[ms.pending_action]:
                if persistent[mid]:
                    if rng_repairs.random() < fault_model.repair_efficacy[ms.pending_action]:
                        persistent[mid] = False

        all_reports: list[WatchdogReport] = []
        for mid in ids:
            faulty = persistent[mid] or transient[mid]
            for wd in fault_model.watchdogs:
                u_status, u_warn = rng_reports.random(2)
                if faulty:
                    is_error = u_status >= wd.false_negative_rate
                else:
                    is_error = u_status < wd.false_positive_rate
                if is_error:
                    status = WatchdogStatus.ERROR
                elif u_warn < fault_model.warning_rate:
                    status = WatchdogStatus.WARNING
                else:
                    status = WatchdogStatus.OK
                all_reports.append(WatchdogReport(tick, wd.name, mid, status))

        issued = device_manager_step(
            machines, all_reports, policy, tick,
            latency=fault_model.repair_latency, window=policy_window,
        )

        by_machine: dict[str, list[WatchdogReport]] = {}
        for r in all_reports:
            by_machine.setdefault(r.machine, []).append(r)
        for mid in ids:
            entries.append(LogEntry(
                tick=tick, machine=mid, reports=tuple(by_machine.get(mid, ())),
                state=machines[mid].state, action=issued.get(mid),
            ))
            truth[(tick, mid)] = (
                "persistent" if persistent[mid]
                else "transient" if transient[mid]
                else "ok"
            )
    return RepairLog(entries=entries, truth=truth)


@dataclass(frozen=True)
class WatchdogRateEstimate:
    """False-positive evidence for one watchdog.

    estimated_fp_rate approximates the per-report false-positive probability
    from the log alone: Errors that kicked off an episode which resolved
    quickly (within the lookahead) using only DoNothing/Reboot, with no
    further Error in between, divided by the watchdog's reports on machines
    that started the tick Healthy.  suspected_per_error is the same numerator
    over the watchdog's total Error count.  true_fp_rate is filled from the
    ground-truth channel when available.
    """

    watchdog: str
    n_reports: int
    n_errors: int
    n_suspected_false: int
    estimated_fp_rate: float
    suspected_per_error: float
    true_fp_rate: float | None = None


def estimate_watchdog_fpr(
    log: RepairLog, lookahead: int = 20
) -> dict[str, WatchdogRateEstimate]:
    """Estimate per-watchdog false-positive rates by mining the repair log.

    The estimator is a proxy: it assumes an error that vanished after at most
    a Reboot was probably never real.  Transient true faults look exactly the
    same, so configurations with frequent transients will overestimate.
    Watchdogs that never report Error are absent from the result.
    """
    if not log.entries:
        raise ValueError("log is empty")
    by_machine: dict[str, list[LogEntry]] = {}
    for e in log.entries:
        by_machine.setdefault(e.machine, []).append(e)
    for seq in by_machine.values():
        seq.sort(key=lambda e: e.tick)

    watchdogs = sorted({r.watchdog for e in log.entries for r in e.reports})
    n_reports = {w: 0 for w in watchdogs}
    n_errors = {w: 0 for w in watchdogs}
    n_suspected = {w: 0 for w in watchdogs}
    fp_errors = {w: 0 for w in watchdogs}
    healthy_truth_reports = {w: 0 for w in watchdogs}

    for seq in by_machine.values():
        states = [e.state for e in seq]
        error_ticks = {
            e.tick for e in seq for r in e.reports if r.status is WatchdogStatus.ERROR
        }
        # Failure episodes: index ranges [start, end) plus the tick of return
        # to Healthy (None when the log ends first).
        episodes: list[tuple[int, int, int | None]] = []
        i = 0
        while i < len(seq):
            if states[i] is MachineHealth.FAILURE:
                j = i
                while j < len(seq) and states[j] is MachineHealth.FAILURE:
                    j += 1
                episodes.append((i, j, seq[j].tick if j < len(seq) else None))
                i = j
            else:
                i += 1

        def episode_of(idx: int) -> tuple[int, int, int | None] | None:
            for ep in episodes:
                if ep[0] <= idx < ep[1]:
                    return ep
            return None

        for idx, entry in enumerate(seq):
            healthy_at_start = idx == 0 or states[idx - 1] is MachineHealth.HEALTHY
            for r in entry.reports:
                if healthy_at_start:
                    n_reports[r.watchdog] += 1
                if log.truth is not None and log.truth.get((entry.tick, entry.machine)) == "ok":
                    healthy_truth_reports[r.watchdog] += 1
                    if r.status is WatchdogStatus.ERROR:
                        fp_errors[r.watchdog] += 1
                if r.status is not WatchdogStatus.ERROR:
                    continue
                n_errors[r.watchdog] += 1
                if not healthy_at_start:
                    continue
                ep = episode_of(idx)
                if ep is None:
                    continue
                start, end, healthy_tick = ep
                if healthy_tick is None or healthy_tick - entry.tick > lookahead:
                    continue
                actions = {seq[k].action for k in range(start, end) if seq[k].action}
                if not actions <= {RepairAction.DO_NOTHING, RepairAction.REBOOT}:
                    continue
                quiet = not any(
                    t in error_ticks for t in range(entry.tick + 1, healthy_tick + 1)
                )
                if quiet:
                    n_suspected[r.watchdog] += 1

    out: dict[str, WatchdogRateEstimate] = {}
    for w in watchdogs:
        if n_errors[w] == 0:
            continue
        true_rate = None
        if log.truth is not None and healthy_truth_reports[w] > 0:
            true_rate = fp_errors[w] / healthy_truth_reports[w]
        out[w] = WatchdogRateEstimate(
            watchdog=w,
            n_reports=n_reports[w],
            n_errors=n_errors[w],
            n_suspected_false=n_suspected[w],
            estimated_fp_rate=n_suspected[w] / n_reports[w] if n_reports[w] else 0.0,
            suspected_per_error=n_suspected[w] / n_errors[w],
            true_fp_rate=true_rate,
        )
    return out


@dataclass(frozen=True)
class CostModel:
    action_costs: Mapping[RepairAction, float] = field(default_factory=lambda: {
        RepairAction.DO_NOTHING: 0.0,
        RepairAction.REBOOT: 1.0,
        RepairAction.REIMAGE: 10.0,
        RepairAction.REPLACE: 100.0,
    })
    downtime_cost_per_tick: float = 1.0


@dataclass(frozen=True)
class PolicyMetrics:
    availability: float
    total_cost: float
    mean_time_to_healthy: float | None  # ticks; None when no episode completed


def evaluate_policy(log: RepairLog, cost_model: CostModel | None = None) -> PolicyMetrics:
    """Availability, total cost and mean Failure-episode length for a log."""
    if not log.entries:
        raise ValueError("log is empty")
    if cost_model is None:
        cost_model = CostModel()
    total_ticks = len(log.entries)
    failure_ticks = sum(1 for e in log.entries if e.state is MachineHealth.FAILURE)
    action_cost = sum(
        cost_model.action_costs[e.action] for e in log.entries if e.action is not None
    )
    total_cost = action_cost + cost_model.downtime_cost_per_tick * failure_ticks

    # Failure episodes partition the failure ticks exactly; only episodes
    # that return to Healthy inside the log count toward time-to-healthy.
    episode_lengths: list[int] = []
    completed_lengths: list[int] = []
    by_machine: dict[str, list[LogEntry]] = {}
    for e in log.entries:
        by_machine.setdefault(e.machine, []).append(e)
    for seq in by_machine.values():
        seq.sort(key=lambda e: e.tick)
        run = 0
        for e in seq:
            if e.state is MachineHealth.FAILURE:
                run += 1
            elif run:
                episode_lengths.append(run)
                completed_lengths.append(run)
                run = 0
        if run:
            episode_lengths.append(run)
    assert sum(episode_lengths) == failure_ticks
    mtth = float(np.mean(completed_lengths)) if completed_lengths else None
    return PolicyMetrics(
        availability=1.0 - failure_ticks / total_ticks,
        total_cost=float(total_cost),
        mean_time_to_healthy=mtth,
    )


def serialize_repair_log(log: RepairLog) -> str:
    """Primary log serialization; never includes the ground-truth channel."""
    lines = []
    for e in log.entries:
        reports = ";".join(
            f"{r.watchdog}:{r.status.value}" for r in sorted(e.reports, key=lambda r: r.watchdog)
        ) or "-"
        action = e.action.value if e.action is not None else "-"
        lines.append(
            f"tick={e.tick} machine={e.machine} state={e.state.value} "
            f"action={action} reports={reports}"
        )
    return "".join(line + "\n" for line in lines)


def serialize_fault_truth(log: RepairLog) -> str:
    if log.truth is None:
        raise ValueError("log carries no ground-truth channel")
    lines = [
        f"tick={tick} machine={mid} truth={status}"
        for (tick, mid), status in sorted(log.truth.items())
    ]
    return "".join(line + "\n" for line in lines)


def _field(line_no: int, token: str, key: str) -> str:
    prefix = key + "="
    if not token.startswith(prefix):
        raise ValueError(f"line {line_no}: expected field '{key}', got '{token}'")
    return token[len(prefix):]


def parse_repair_log(text: str) -> RepairLog:
    entries = []
    status_by_value = {s.value: s for s in WatchdogStatus}
    action_by_value = {a.value: a for a in RepairAction}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != 5:
            raise ValueError(f"line {line_no}: expected 5 fields, got {len(tokens)}")
        tick = int(_field(line_no, tokens[0], "tick"))
        machine = _field(line_no, tokens[1], "machine")
        state_raw = _field(line_no, tokens[2], "state")
        if state_raw not in ("Healthy", "Failure"):
            raise ValueError(f"line {line_no}: bad state '{state_raw}'")
        state = MachineHealth(state_raw)
        action_raw = _field(line_no, tokens[3], "action")
        if action_raw != "-" and action_raw not in action_by_value:
            raise ValueError(f"line {line_no}: bad action '{action_raw}'")
        action = None if action_raw == "-" else action_by_value[action_raw]
        reports_raw = _field(line_no, tokens[4], "reports")
        reports: tuple[WatchdogReport, ...] = ()
        if reports_raw != "-":
            parts = []
            for item in reports_raw.split(";"):
                wd, _, status = item.partition(":")
                if status not in status_by_value:
                    raise ValueError(f"line {line_no}: bad status '{status}'")
                parts.append(WatchdogReport(tick, wd, machine, status_by_value[status]))
            reports = tuple(parts)
        entries.append(LogEntry(tick, machine, reports, state, action))
    return RepairLog(entries=entries, truth=None)


def parse_fault_truth(text: str) -> dict[tuple[int, str], str]:
    truth = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != 3:
            raise ValueError(f"line {line_no}: expected 3 fields, got {len(tokens)}")
        tick = int(_field(line_no, tokens[0], "tick"))
        machine = _field(line_no, tokens[1], "machine")
        status = _field(line_no, tokens[2], "truth")
        if status not in ("ok", "transient", "persistent"):
            raise ValueError(f"line {line_no}: bad truth '{status}'")
        truth[(tick, machine)] = status
    return truth
