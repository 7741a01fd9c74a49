"""Deterministic discrete-event replay of workload scenarios.

A scenario names a platform, declares workloads (with arrival and exit
times) and scripts events. The simulator advances over the union of
control-quantum ticks and event timestamps; at every step the governor
decides and one trace row per live workload is emitted. Predicted metrics
come straight from the operating-point tables, so a run depends only on
the scenario and table bytes.
"""

from __future__ import annotations

import csv
import io
import json
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from edge_rtm import governor as default_governor
from edge_rtm.governor import EMPTY_DECISION, Decision, RuntimeState, apply_event, event_tag, knobs_of, monitors_of
from edge_rtm.opspace import Budgets, OperatingPointTable, ResourceSlot, TableError, UsageError, load_table_file
from edge_rtm.platform import PlatformError, PlatformSpec, PlatformState, builtin_platform
from edge_rtm.workload import DnnWorkload, OpaqueWorkload, ReconfigCost, Workload, switch_cost

# Same-timestamp events are applied in this order.
EVENT_KINDS = ("arrival", "exit", "budget_change", "power_budget_change", "accuracy_requirement_change")
KIND_RANK = {k: i for i, k in enumerate(EVENT_KINDS)}

DEFAULT_QUANTUM_MS = 100

TRACE_COLUMNS = (
    "at_ms",
    "workload_id",
    "config_level",
    "cluster",
    "cores",
    "freq_mhz",
    "pred_time_ms",
    "pred_energy_mj",
    "pred_power_mw",
    "accuracy",
    "platform_power_mw",
    "event_tag",
    "rationale",
)

_MILLI = Decimal("0.001")


def fixed3(x) -> Decimal:
    """Quantize to three fractional digits."""
    if isinstance(x, Fraction):
        return (Decimal(x.numerator) / Decimal(x.denominator)).quantize(_MILLI, ROUND_HALF_UP)
    return Decimal(repr(float(x))).quantize(_MILLI, ROUND_HALF_UP)


class ScenarioError(ValueError):
    """Scenario failed validation; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class ScenarioEvent:
    at_ms: int
    kind: str
    workload_id: Optional[str] = None
    budgets: Optional[Budgets] = None
    value: Optional[float] = None


@dataclass(frozen=True)
class Scenario:
    platform: PlatformSpec
    workloads: tuple[Workload, ...]
    tables: Mapping[str, OperatingPointTable]
    events: tuple[ScenarioEvent, ...]
    control_quantum_ms: int = DEFAULT_QUANTUM_MS
    horizon_ms: int = 0
    seed: int = 0  # reserved; the core never draws random numbers

    def __post_init__(self):
        if self.control_quantum_ms <= 0:
            raise ScenarioError("control_quantum_ms", "must be > 0")
        ids = [w.id for w in self.workloads]
        if len(set(ids)) != len(ids):
            raise ScenarioError("workloads", "workload ids must be unique")
        object.__setattr__(self, "events", tuple(sort_events(self.events, self.workloads)))

    def timeline(self) -> list[ScenarioEvent]:
        """Scripted events plus arrival/exit events derived from the workloads, in processing order."""
        life = []
        for w in self.workloads:
            life.append(ScenarioEvent(w.arrival_ms, "arrival", w.id))
            if w.exit_ms is not None:
                life.append(ScenarioEvent(w.exit_ms, "exit", w.id))
        return sort_events(list(self.events) + life, self.workloads)


def sort_events(events: Iterable[ScenarioEvent], workloads: Sequence[Workload]) -> list[ScenarioEvent]:
    """Total order on (time, kind rank, workload declaration index).

    Rejects two events that would share a key, so the order never depends
    on their position in the input.
    """
    decl = {w.id: i for i, w in enumerate(workloads)}

    def key(e: ScenarioEvent):
        return (e.at_ms, KIND_RANK[e.kind], decl.get(e.workload_id, -1))

    out = sorted(events, key=key)
    for a, b in zip(out, out[1:]):
        if key(a) == key(b):
            raise ScenarioError("events", f"two {a.kind} events for {a.workload_id or 'the platform'} at {a.at_ms} ms")
    return out


# --------------------------------------------------------------------------
# scenario file

def _req(obj: Mapping, key: str, path: str):
    if key not in obj:
        raise ScenarioError(f"{path}.{key}" if path else key, "required field missing")
    return obj[key]


def _int(v, path: str, minimum: int = 0) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ScenarioError(path, f"expected an integer, got {v!r}")
    if v < minimum:
        raise ScenarioError(path, f"must be >= {minimum}")
    return int(v)


def _num(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(path, f"expected a number, got {v!r}")
    if v < 0:
        raise ScenarioError(path, "must be >= 0")
    return float(v)


def _budgets(obj, path: str) -> Budgets:
    if not isinstance(obj, dict):
        raise ScenarioError(path, "expected an object")
    for k, v in obj.items():
        if k not in ("t_max_ms", "e_max_mj", "p_max_mw", "acc_min"):
            raise ScenarioError(f"{path}.{k}", "unknown budget field")
        _num(v, f"{path}.{k}")
    return Budgets.from_json(obj)


def _check_keys(obj: Mapping, allowed: set, path: str) -> None:
    for k in obj:
        if k not in allowed:
            raise ScenarioError(f"{path}.{k}" if path else k, "unknown field")


_DNN_FIELDS = {"id", "type", "ladder", "table", "budgets", "arrival_ms", "exit_ms", "reconfig"}
_OPAQUE_FIELDS = {"id", "type", "demand", "power_mw", "arrival_ms", "exit_ms"}


def _workload(obj, path: str, spec: PlatformSpec, base_dir: Path,
              table_cache: dict) -> tuple[Workload, Optional[OperatingPointTable]]:
    if not isinstance(obj, dict):
        raise ScenarioError(path, "expected an object")
    wid = _req(obj, "id", path)
    if not isinstance(wid, str) or not wid:
        raise ScenarioError(f"{path}.id", "expected a non-empty string")
    kind = _req(obj, "type", path)
    arrival = _int(obj.get("arrival_ms", 0), f"{path}.arrival_ms")
    exit_ms = obj.get("exit_ms")
    if exit_ms is not None:
        exit_ms = _int(exit_ms, f"{path}.exit_ms")
        if exit_ms <= arrival:
            raise ScenarioError(f"{path}.exit_ms", "must be after arrival_ms")
    if kind == "opaque":
        _check_keys(obj, _OPAQUE_FIELDS, path)
        d = _req(obj, "demand", path)
        if not isinstance(d, dict):
            raise ScenarioError(f"{path}.demand", "expected an object")
        _check_keys(d, {"cluster", "cores", "freq_mhz"}, f"{path}.demand")
        slot = ResourceSlot(str(_req(d, "cluster", f"{path}.demand")),
                            _int(_req(d, "cores", f"{path}.demand"), f"{path}.demand.cores", 1),
                            _int(_req(d, "freq_mhz", f"{path}.demand"), f"{path}.demand.freq_mhz", 1))
        try:
            spec.check_slot(slot)
        except PlatformError as exc:
            raise ScenarioError(f"{path}.demand", str(exc)) from None
        power = _num(_req(obj, "power_mw", path), f"{path}.power_mw")
        return OpaqueWorkload(wid, slot, power, arrival, exit_ms), None
    if kind != "dnn":
        raise ScenarioError(f"{path}.type", f"expected 'dnn' or 'opaque', got {kind!r}")
    _check_keys(obj, _DNN_FIELDS, path)
    rel = _req(obj, "table", path)
    if not isinstance(rel, str):
        raise ScenarioError(f"{path}.table", "expected a path string")
    tpath = (base_dir / rel).resolve()
    if tpath not in table_cache:
        try:
            table_cache[tpath] = load_table_file(tpath)
        except OSError as exc:
            raise ScenarioError(f"{path}.table", f"cannot read {rel}: {exc.strerror}") from None
        except TableError as exc:
            raise ScenarioError(f"{path}.table", f"{rel}: {exc}") from None
    table = table_cache[tpath].for_workload(wid)
    if not len(table):
        raise ScenarioError(f"{path}.table", f"{rel} has no rows for workload {wid!r}")
    budgets = _budgets(obj.get("budgets", {}), f"{path}.budgets")
    ladder = None
    if "ladder" in obj:
        raw = obj["ladder"]
        if not isinstance(raw, list) or not raw:
            raise ScenarioError(f"{path}.ladder", "expected a non-empty list of percentages")
        try:
            ladder = tuple(Fraction(str(x)) / 100 for x in raw)
        except (ValueError, ZeroDivisionError):
            raise ScenarioError(f"{path}.ladder", "expected numeric percentages") from None
    reconfig = ReconfigCost()
    if "reconfig" in obj:
        r = obj["reconfig"]
        if not isinstance(r, dict):
            raise ScenarioError(f"{path}.reconfig", "expected an object")
        _check_keys(r, {"switch_time_ms", "switch_energy_mj"}, f"{path}.reconfig")
        reconfig = ReconfigCost(_num(r.get("switch_time_ms", 0), f"{path}.reconfig.switch_time_ms"),
                                _num(r.get("switch_energy_mj", 0), f"{path}.reconfig.switch_energy_mj"))
    try:
        w = DnnWorkload.from_table(wid, table, config_ladder=ladder, budgets=budgets, arrival_ms=arrival,
                                   exit_ms=exit_ms, reconfig=reconfig)
    except ValueError as exc:
        raise ScenarioError(f"{path}.ladder" if ladder else f"{path}.table", str(exc)) from None
    return w, table


def _event(obj, path: str, ids: set) -> ScenarioEvent:
    if not isinstance(obj, dict):
        raise ScenarioError(path, "expected an object")
    at = _int(_req(obj, "at_ms", path), f"{path}.at_ms")
    kind = _req(obj, "kind", path)
    if kind in ("arrival", "exit"):
        raise ScenarioError(f"{path}.kind", "arrivals and exits come from workload arrival_ms/exit_ms")
    if kind not in EVENT_KINDS:
        raise ScenarioError(f"{path}.kind", f"unknown event kind {kind!r}")
    if kind == "power_budget_change":
        _check_keys(obj, {"at_ms", "kind", "power_budget_mw"}, path)
        return ScenarioEvent(at, kind, value=_num(_req(obj, "power_budget_mw", path), f"{path}.power_budget_mw"))
    wid = _req(obj, "workload_id", path)
    if wid not in ids:
        raise ScenarioError(f"{path}.workload_id", f"unknown workload {wid!r}")
    if kind == "budget_change":
        _check_keys(obj, {"at_ms", "kind", "workload_id", "budgets"}, path)
        return ScenarioEvent(at, kind, wid, budgets=_budgets(_req(obj, "budgets", path), f"{path}.budgets"))
    _check_keys(obj, {"at_ms", "kind", "workload_id", "acc_min"}, path)
    acc = _num(_req(obj, "acc_min", path), f"{path}.acc_min")
    if acc > 100:
        raise ScenarioError(f"{path}.acc_min", "must be <= 100")
    return ScenarioEvent(at, kind, wid, value=acc)


def parse_scenario(obj: Any, base_dir: Union[str, Path] = ".") -> Scenario:
    if not isinstance(obj, dict):
        raise ScenarioError("", "scenario must be a JSON object")
    _check_keys(obj, {"platform", "control_quantum_ms", "horizon_ms", "seed", "workloads", "events"}, "")
    base_dir = Path(base_dir)
    p = _req(obj, "platform", "")
    try:
        spec = builtin_platform(p) if isinstance(p, str) else PlatformSpec.from_json(p)
    except PlatformError as exc:
        raise ScenarioError("platform", str(exc)) from None
    quantum = _int(obj.get("control_quantum_ms", DEFAULT_QUANTUM_MS), "control_quantum_ms", 1)
    raw_w = _req(obj, "workloads", "")
    if not isinstance(raw_w, list):
        raise ScenarioError("workloads", "expected a list")
    workloads, tables, cache = [], {}, {}
    for i, wo in enumerate(raw_w):
        w, t = _workload(wo, f"workloads[{i}]", spec, base_dir, cache)
        if any(x.id == w.id for x in workloads):
            raise ScenarioError(f"workloads[{i}].id", f"duplicate workload id {w.id!r}")
        workloads.append(w)
        if t is not None:
            tables[w.id] = t
    ids = {w.id for w in workloads}
    raw_e = obj.get("events", [])
    if not isinstance(raw_e, list):
        raise ScenarioError("events", "expected a list")
    events = [_event(e, f"events[{i}]", ids) for i, e in enumerate(raw_e)]
    if "horizon_ms" in obj:
        horizon = _int(obj["horizon_ms"], "horizon_ms")
    else:
        marks = [e.at_ms for e in events] + [w.arrival_ms for w in workloads]
        marks += [w.exit_ms for w in workloads if w.exit_ms is not None]
        horizon = max(marks, default=0) + 10 * quantum
    seed = _int(obj.get("seed", 0), "seed")
    return Scenario(spec, tuple(workloads), tables, tuple(events), quantum, horizon, seed)


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        obj = json.loads(path.read_bytes().decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"invalid JSON: {exc}") from None
    return parse_scenario(obj, path.parent)


# --------------------------------------------------------------------------
# trace

@dataclass(frozen=True)
class TraceRecord:
    at_ms: int
    workload_id: str
    config_level: Optional[Decimal]
    cluster: str
    cores: Optional[int]
    freq_mhz: Optional[int]
    pred_time_ms: Optional[Decimal]
    pred_energy_mj: Optional[Decimal]
    pred_power_mw: Optional[Decimal]
    accuracy: Optional[Decimal]
    platform_power_mw: Decimal
    event_tag: str
    rationale: str

    @property
    def infeasible(self) -> bool:
        return self.cluster == ""

    def slot(self) -> Optional[ResourceSlot]:
        if self.infeasible:
            return None
        return ResourceSlot(self.cluster, self.cores, self.freq_mhz)

    def row(self) -> list[str]:
        return ["" if v is None else str(v) for v in (getattr(self, c) for c in TRACE_COLUMNS)]


@dataclass(frozen=True)
class Placement:
    record: TraceRecord
    footprint: Mapping[str, int]


@dataclass
class Trace:
    records: list[TraceRecord]
    horizon_ms: int
    platform: Optional[PlatformSpec] = None

    def __len__(self) -> int:
        return len(self.records)

    def groups(self) -> list[list[TraceRecord]]:
        """Rows split per (timestamp, step); one group per governor invocation."""
        out: list[list[TraceRecord]] = []
        for r in self.records:
            if out and out[-1][0].at_ms == r.at_ms and out[-1][0].event_tag == r.event_tag:
                out[-1].append(r)
            else:
                out.append([r])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        w.writerows(r.row() for r in self.records)
        return buf.getvalue()

    def write(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, platform: Optional[PlatformSpec] = None) -> "Trace":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_COLUMNS:
            raise ValueError("not a trace file: header mismatch")

        def dec(s):
            return Decimal(s) if s else None

        def integer(s):
            return int(s) if s else None

        records = []
        for row in reader:
            if len(row) != len(TRACE_COLUMNS):
                raise ValueError(f"trace line {reader.line_num}: expected {len(TRACE_COLUMNS)} fields")
            records.append(TraceRecord(int(row[0]), row[1], dec(row[2]), row[3], integer(row[4]), integer(row[5]),
                                       dec(row[6]), dec(row[7]), dec(row[8]), dec(row[9]), Decimal(row[10]),
                                       row[11], row[12]))
        horizon = max((r.at_ms for r in records), default=0)
        return cls(records, horizon, platform)


# --------------------------------------------------------------------------
# run

def _group_rows(state: RuntimeState, decision: Decision, last_level: dict) -> tuple[list[tuple], Decimal, list[str]]:
    """Per-live-workload row bodies for ``decision`` plus their platform power."""
    rows = []
    notes = []
    for w in state.live_workloads():
        if isinstance(w, OpaqueWorkload):
            slot = decision.fixed.get(w.id)
            if slot is None:
                rows.append((w.id, None, "", None, None, None, None, None, None))
            else:
                rows.append((w.id, None, slot.cluster_id, slot.core_count, slot.freq_mhz, None, None,
                             fixed3(w.fixed_power), None))
            continue
        a = decision.assignments.get(w.id)
        if a is None:
            rows.append((w.id, None, "", None, None, None, None, None, None))
            continue
        p, slot = a
        t, e = p.exec_time, p.energy
        prev = last_level.get(w.id)
        if prev is not None and prev != p.config_level and (w.reconfig.switch_time or w.reconfig.switch_energy):
            dt, de = switch_cost(prev, p.config_level, w.reconfig, w.config_ladder)
            t, e = t + dt, e + de
            notes.append(f"reconfig:{w.id}")
        last_level[w.id] = p.config_level
        rows.append((w.id, fixed3(p.config_level), slot.cluster_id, slot.core_count, slot.freq_mhz,
                     fixed3(t), fixed3(e), fixed3(p.power), fixed3(p.accuracy)))
    power = sum((r[7] for r in rows if r[7] is not None), Decimal("0.000"))
    return rows, power, notes


def run(scenario: Scenario, governor=None) -> Trace:
    """Replay ``scenario``. ``governor`` supplies ``handle_event`` and
    ``control_step``; the default is :mod:`edge_rtm.governor`."""
    gov = governor or default_governor
    spec = scenario.platform
    q = scenario.control_quantum_ms
    horizon = scenario.horizon_ms
    registry = {w.id: w for w in scenario.workloads}
    state = RuntimeState(PlatformState.initial(spec), registry, dict(scenario.tables), (), spec.power_budget, 0)

    by_time: dict[int, list[ScenarioEvent]] = defaultdict(list)
    for ev in scenario.timeline():
        if ev.at_ms <= horizon:
            by_time[ev.at_ms].append(ev)
    times = sorted(set(range(0, horizon + 1, q)) | set(by_time))

    records: list[TraceRecord] = []
    decision = EMPTY_DECISION
    knobs: Mapping = {}
    last_level: dict = {}
    cached = None  # (decision, live) -> rows for tick reuse
    mon, mon_for = None, None

    def emit(t: int, tag: str, rationale: str, reuse: bool) -> None:
        nonlocal cached
        if reuse and cached is not None and cached[0] is decision and cached[1] == state.live:
            rows, power = cached[2], cached[3]
            notes = []
        else:
            rows, power, notes = _group_rows(state, decision, last_level)
            # rows carrying a one-off switch cost must not be replayed on later ticks
            cached = None if notes else (decision, state.live, rows, power)
        if notes:
            rationale = rationale + ";" + ";".join(notes)
        for r in rows:
            rat = ("infeasible;" + rationale) if r[2] == "" else rationale
            records.append(TraceRecord(t, *r, power, tag, rat))

    for t in times:
        for ev in by_time.get(t, ()):
            new = gov.handle_event(ev, state, decision)
            state = apply_event(ev, state)
            state = replace(state, platform=new.state)
            decision, knobs = new, knobs_of(new)
            if state.live:
                emit(t, event_tag(ev), ";".join(decision.rationale), reuse=False)
        if t % q == 0 and state.live:
            if mon_for is not decision or mon.power_budget != state.power_budget:
                mon, mon_for = monitors_of(decision, state.power_budget), decision
            new_knobs, d = gov.control_step(mon, knobs, state)
            if new_knobs is knobs:
                emit(t, "tick", "hold", reuse=True)
            else:
                decision, knobs = d, new_knobs
                state = replace(state, platform=d.state)
                emit(t, "tick", ";".join(d.rationale), reuse=False)
    return Trace(records, horizon, spec)


def run_file(path: Union[str, Path], governor=None) -> Trace:
    return run(load_scenario(path), governor)


# --------------------------------------------------------------------------
# queries

def checkpoint(trace: Trace, at_ms: int) -> dict[str, Placement]:
    """Assignments in force at ``at_ms``: the last row group at or before it.

    Infeasible workloads map to a placement with an empty footprint.
    """
    if at_ms < 0 or at_ms > trace.horizon_ms:
        raise ValueError(f"{at_ms} ms is outside the trace horizon [0, {trace.horizon_ms}]")
    current: list[TraceRecord] = []
    for g in trace.groups():
        if g[0].at_ms > at_ms:
            break
        current = g
    out = {}
    for r in current:
        slot = r.slot()
        if slot is None:
            fp = {}
        elif trace.platform is not None:
            fp = trace.platform.footprint(slot)
        else:
            fp = {slot.cluster_id: slot.core_count}
        out[r.workload_id] = Placement(r, fp)
    return out


@dataclass(frozen=True)
class WorkloadSummary:
    rows: int
    budget_violations: int
    mean_power_mw: Decimal
    level_changes: int
    migrations: int


def summarize(trace: Trace) -> dict[str, Any]:
    """Per-workload aggregates computed from the rows alone.

    A budget violation is a row where a workload has no feasible placement
    (every assigned point satisfies its budgets by construction). A
    migration is a change of cluster between consecutive assigned rows; a
    level change likewise for the configuration level.
    """
    if not trace.records:
        raise ValueError("cannot summarize an empty trace")
    per: dict[str, list[TraceRecord]] = defaultdict(list)
    for r in trace.records:
        per[r.workload_id].append(r)
    workloads = {}
    for wid in sorted(per):
        rows = per[wid]
        violations = sum(1 for r in rows if r.infeasible)
        powers = [r.pred_power_mw for r in rows if r.pred_power_mw is not None]
        mean = (sum(powers, Decimal(0)) / len(powers)).quantize(_MILLI) if powers else Decimal("0.000")
        placed = [r for r in rows if not r.infeasible]
        levels = sum(1 for a, b in zip(placed, placed[1:]) if a.config_level != b.config_level)
        moves = sum(1 for a, b in zip(placed, placed[1:]) if a.cluster != b.cluster)
        workloads[wid] = WorkloadSummary(len(rows), violations, mean, levels, moves)
    groups = trace.groups()
    mean_platform = (sum((g[0].platform_power_mw for g in groups), Decimal(0)) / len(groups)).quantize(_MILLI)
    return {"workloads": workloads, "mean_platform_power_mw": mean_platform, "steps": len(groups)}


def format_summary(report: Mapping[str, Any]) -> str:
    lines = ["workload,rows,budget_violations,mean_power_mw,level_changes,migrations"]
    for wid, s in report["workloads"].items():
        lines.append(f"{wid},{s.rows},{s.budget_violations},{s.mean_power_mw},{s.level_changes},{s.migrations}")
    lines.append(f"# steps={report['steps']} mean_platform_power_mw={report['mean_platform_power_mw']}")
    return "\n".join(lines) + "\n"
