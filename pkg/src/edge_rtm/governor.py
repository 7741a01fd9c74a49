"""Runtime manager: picks (configuration level, mapping, frequency) per workload.

Objective
---------
Workloads are ranked by priority (strictest latency budget first). A joint
assignment is compared by the vector of per-workload accuracy utilities in
priority order, lexicographically; an unassigned workload is worse than any
assignment. Remaining ties are broken per workload, again in priority
order, by energy, execution time, frequency, resource key and level.

An accuracy requirement (``Budgets.acc_min``) is both a floor and a target:
accuracy above a stated requirement earns nothing, so a workload with a
requirement settles on the cheapest point that meets it and leaves the
surplus to lower-priority workloads. Without a requirement the utility is
the accuracy itself.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Collection, Iterable, Mapping, Optional, Sequence

import numpy as np

from edge_rtm.opspace import Budgets, OperatingPoint, OperatingPointTable, ResourceSlot
from edge_rtm.platform import PlatformError, PlatformSpec, PlatformState, allocate, release, set_frequency
from edge_rtm.workload import DnnWorkload, OpaqueWorkload, Workload

EXHAUSTIVE_LIMIT = 10**6
BRUTE_FORCE_LIMIT = 10**7

_UNASSIGNED = (1, 0.0)


class SearchSpaceTooLarge(ValueError):
    pass


def accuracy_utility(p: OperatingPoint, budgets: Budgets) -> float:
    if budgets.acc_min > 0:
        return min(p.accuracy, budgets.acc_min)
    return p.accuracy


def tie_key(p: OperatingPoint) -> tuple:
    return (p.energy, p.exec_time, p.resource.freq_mhz, p.resource.key(), p.config_level)


def point_rank(p: OperatingPoint, budgets: Budgets) -> tuple:
    """Sort key of a single workload's options; smallest is best."""
    return (-accuracy_utility(p, budgets),) + tie_key(p)


def priority_order(workloads: Iterable[Workload]) -> list[DnnWorkload]:
    return sorted((w for w in workloads if isinstance(w, DnnWorkload)), key=lambda w: w.priority_key)


def select_point(table: Iterable[OperatingPoint], budgets: Budgets,
                 available: Optional[Collection[ResourceSlot]] = None) -> Optional[OperatingPoint]:
    """Best feasible point of one workload, or None when nothing meets the budgets.

    ``available`` restricts the choice to the given slots.
    """
    best = None
    best_key = None
    for p in table:
        if not budgets.admits(p):
            continue
        if available is not None and p.resource not in available:
            continue
        k = point_rank(p, budgets)
        if best_key is None or k < best_key:
            best, best_key = p, k
    return best


@dataclass(frozen=True)
class Decision:
    """Governor output for one instant.

    ``assignments`` maps each placed DNN to its point and slot; ``fixed``
    holds the slots of opaque workloads. ``state`` is the platform state
    with all of it allocated and domain frequencies set.
    """

    assignments: Mapping[str, tuple[OperatingPoint, ResourceSlot]]
    infeasible: tuple[str, ...] = ()
    rationale: tuple[str, ...] = ()
    fixed: Mapping[str, ResourceSlot] = field(default_factory=dict)
    state: Optional[PlatformState] = None
    total_power: float = 0.0

    def outcome(self) -> tuple:
        """Assignments and infeasible set, for comparing decisions across search paths."""
        return (tuple(sorted((k, v[0].key()) for k, v in self.assignments.items())),
                tuple(sorted(self.infeasible)))

    def point(self, workload_id: str) -> Optional[OperatingPoint]:
        a = self.assignments.get(workload_id)
        return a[0] if a else None


EMPTY_DECISION = Decision({})


# --------------------------------------------------------------------------
# shared plumbing: base state and opaque placement

@dataclass
class _Base:
    state: PlatformState
    pinned: dict[str, int]  # domain -> frequency fixed by opaque or background holders
    fixed: dict[str, ResourceSlot]
    fixed_power: float
    infeasible: list[str]
    power_left: float


def _prepare(workloads: Sequence[Workload], platform_state: PlatformState, power_budget: float) -> _Base:
    spec = platform_state.spec
    state = platform_state
    ids = {w.id for w in workloads}
    for owner in state.owners():
        if owner in ids:
            state = release(state, owner)
    pinned = {spec.domain_of(c): state.cluster_freq(c) for c, _, _ in state.holdings}
    fixed: dict[str, ResourceSlot] = {}
    infeasible: list[str] = []
    fixed_power = 0.0
    for w in workloads:
        if not isinstance(w, OpaqueWorkload):
            continue
        slot = w.fixed_demand
        try:
            dom = spec.domain_of(slot.cluster_id)
            if dom in pinned and pinned[dom] != slot.freq_mhz:
                raise PlatformError(f"domain {dom} pinned at {pinned[dom]} MHz")
            state = allocate(set_frequency(state, dom, slot.freq_mhz), w.id, slot)
        except PlatformError:
            infeasible.append(w.id)
            continue
        pinned[dom] = slot.freq_mhz
        fixed[w.id] = slot
        fixed_power += w.fixed_power
        if fixed_power > power_budget:
            infeasible.append(w.id)
    return _Base(state, pinned, fixed, fixed_power, infeasible, power_budget - fixed_power)


def _usable(w: DnnWorkload, p: OperatingPoint, spec: PlatformSpec,
            slots: Optional[Collection[ResourceSlot]]) -> bool:
    return (
        p.workload_id == w.id
        and p.config_level in w.config_ladder
        and w.budgets.admits(p)
        and spec.has_cluster(p.resource.cluster_id)
        and spec.slot_valid(p.resource)
        and (slots is None or p.resource in slots)
    )


def _fmt_level(level: Fraction) -> str:
    pct = level * 100
    return str(pct.numerator) if pct.denominator == 1 else f"{float(pct):g}"


def _build_decision(base: _Base, dnns: Sequence[DnnWorkload], chosen: Sequence[Optional[OperatingPoint]],
                    search: str, trigger: Optional[str], extra: Sequence[str] = ()) -> Decision:
    state = base.state
    spec = state.spec
    assignments: dict[str, tuple[OperatingPoint, ResourceSlot]] = {}
    for w, p in zip(dnns, chosen):
        if p is None:
            continue
        state = set_frequency(state, spec.domain_of(p.resource.cluster_id), p.resource.freq_mhz)
        state = allocate(state, w.id, p.resource)
        assignments[w.id] = (p, p.resource)
    infeasible = list(base.infeasible) + [w.id for w, p in zip(dnns, chosen) if p is None]
    power = base.fixed_power + math.fsum(p.power for p in chosen if p is not None)
    rationale = []
    if trigger:
        rationale.append(f"trigger:{trigger}")
    rationale.append(f"search:{search}")
    for w, p in zip(dnns, chosen):
        if p is None:
            rationale.append(f"infeasible:{w.id}")
        else:
            rationale.append(f"assign:{w.id}={_fmt_level(p.config_level)}%@{p.resource}")
    rationale.extend(extra)
    return Decision(assignments, tuple(infeasible), tuple(rationale), dict(base.fixed),
                    state.with_power(power), power)


# --------------------------------------------------------------------------
# search

@dataclass(frozen=True)
class _Option:
    point: OperatingPoint
    util: tuple
    tie: tuple
    footprint: tuple[tuple[str, int], ...]
    domain: str
    freq: int
    power: float


def _options(w: DnnWorkload, table: Iterable[OperatingPoint], spec: PlatformSpec,
             slots: Optional[Collection[ResourceSlot]]) -> list[_Option]:
    out = []
    for p in table:
        if not _usable(w, p, spec, slots):
            continue
        out.append(_Option(
            point=p,
            util=(0, -accuracy_utility(p, w.budgets)),
            tie=tie_key(p),
            footprint=tuple(sorted(spec.footprint(p.resource).items())),
            domain=spec.domain_of(p.resource.cluster_id),
            freq=p.resource.freq_mhz,
            power=p.power,
        ))
    out.sort(key=lambda o: (o.util, o.tie))
    return out


class _Partial:
    """Mutable bookkeeping for the depth-first search: free units, domain
    frequencies and the number of chosen options per domain."""

    def __init__(self, base: _Base):
        spec = base.state.spec
        self.free = {c.id: base.state.free(c.id) for c in spec.clusters}
        self.freq = dict(base.pinned)
        self.count = {d: 1 for d in base.pinned}

    def fits(self, o: _Option) -> bool:
        for cid, n in o.footprint:
            if self.free[cid] < n:
                return False
        f = self.freq.get(o.domain)
        return f is None or f == o.freq

    def push(self, o: _Option) -> None:
        for cid, n in o.footprint:
            self.free[cid] -= n
        self.freq[o.domain] = o.freq
        self.count[o.domain] = self.count.get(o.domain, 0) + 1

    def pop(self, o: _Option) -> None:
        for cid, n in o.footprint:
            self.free[cid] += n
        self.count[o.domain] -= 1
        if not self.count[o.domain]:
            del self.count[o.domain]
            del self.freq[o.domain]


def _exhaustive(options: list[list[_Option]], base: _Base) -> list[Optional[_Option]]:
    """Branch and bound over the joint space; exact for the lexicographic objective."""
    n = len(options)
    part = _Partial(base)
    limit = base.power_left
    best: list = [None, None, None]  # utils, ties, choice
    choice: list[Optional[_Option]] = [None] * n

    def optimistic(i: int, power: float) -> tuple:
        out = []
        for j in range(i, n):
            u = _UNASSIGNED
            for o in options[j]:
                if power + o.power <= limit and part.fits(o):
                    u = o.util
                    break
            out.append(u)
        return tuple(out)

    def rec(i: int, utils: tuple, ties: tuple, power: float) -> None:
        if i == n:
            if best[0] is None or (utils, ties) < (best[0], best[1]):
                best[0], best[1], best[2] = utils, ties, list(choice)
            return
        if best[0] is not None:
            bound = utils + optimistic(i, power)
            if bound > best[0]:
                return
            if bound == best[0] and ties > best[1][:i]:
                return
        for o in options[i]:
            if power + o.power <= limit and part.fits(o):
                part.push(o)
                choice[i] = o
                rec(i + 1, utils + (o.util,), ties + (o.tie,), power + o.power)
                part.pop(o)
                choice[i] = None
        rec(i + 1, utils + (_UNASSIGNED,), ties + ((),), power)

    rec(0, (), (), 0.0)
    return best[2] if best[2] is not None else [None] * n


def _greedy(options: list[list[_Option]], base: _Base) -> tuple[list[Optional[_Option]], list[str]]:
    """Priority-order best fit, then a power repair pass from the lowest priority up."""
    n = len(options)
    part = _Partial(base)
    choice: list[Optional[_Option]] = [None] * n
    for i in range(n):
        for o in options[i]:
            if part.fits(o):
                part.push(o)
                choice[i] = o
                break
    repaired = []
    power = math.fsum(o.power for o in choice if o is not None)
    for i in reversed(range(n)):
        while power > base.power_left and choice[i] is not None:
            cur = choice[i]
            part.pop(cur)
            # best-ranked cheaper option that restores the ceiling, else the cheapest one
            target = cur.power - (power - base.power_left)
            cheaper = [o for o in options[i] if o.power < cur.power and part.fits(o)]
            step = next((o for o in cheaper if o.power <= target), None)
            if step is None and cheaper:
                step = min(cheaper, key=lambda o: (o.power, o.util, o.tie))
            if step is not None:
                part.push(step)
            choice[i] = step
            repaired.append(i)
            power = math.fsum(o.power for o in choice if o is not None)
        if power <= base.power_left:
            break
    return choice, sorted(set(repaired))


def joint_space_size(options: Sequence[Sequence]) -> int:
    return math.prod(len(o) + 1 for o in options)


def allocate_all(workloads: Sequence[Workload], platform_state: PlatformState,
                 tables: Mapping[str, Iterable[OperatingPoint]], power_budget: Optional[float] = None, *,
                 slots: Optional[Collection[ResourceSlot]] = None, exhaustive_limit: int = EXHAUSTIVE_LIMIT,
                 trigger: Optional[str] = None) -> Decision:
    """Jointly place every workload on the platform.

    Opaque workloads get their fixed demand first. DNNs are then searched
    exhaustively when the joint space (options + 1 per DNN, multiplied) is
    at most ``exhaustive_limit``, greedily otherwise. Workloads that cannot
    be placed are listed in ``Decision.infeasible``.
    """
    spec = platform_state.spec
    if power_budget is None:
        power_budget = spec.power_budget
    base = _prepare(workloads, platform_state, power_budget)
    dnns = priority_order(workloads)
    options = [_options(w, tables.get(w.id, ()), spec, slots) for w in dnns]
    if joint_space_size(options) <= exhaustive_limit:
        chosen = _exhaustive(options, base)
        search, extra = "exhaustive", []
    else:
        chosen, repaired = _greedy(options, base)
        search, extra = "greedy", [f"repair:{dnns[i].id}" for i in repaired]
    points = [o.point if o is not None else None for o in chosen]
    return _build_decision(base, dnns, points, search, trigger, extra)


def brute_force_allocate(workloads: Sequence[Workload], platform_state: PlatformState,
                         tables: Mapping[str, Iterable[OperatingPoint]], power_budget: Optional[float] = None, *,
                         slots: Optional[Collection[ResourceSlot]] = None,
                         limit: int = BRUTE_FORCE_LIMIT) -> Decision:
    """Reference answer by enumerating every (point or nothing) tuple.

    Shares only the objective with :func:`allocate_all`; feasibility and
    ranking are evaluated column-wise over the full cross product.
    """
    spec = platform_state.spec
    if power_budget is None:
        power_budget = spec.power_budget
    base = _prepare(workloads, platform_state, power_budget)
    dnns = priority_order(workloads)
    if not dnns:
        return _build_decision(base, [], [], "brute-force", None)

    cands = [[p for p in tables.get(w.id, ()) if _usable(w, p, spec, slots)] for w in dnns]
    shape = tuple(len(c) + 1 for c in cands)  # last index = unassigned
    total = math.prod(shape)
    if total > limit:
        raise SearchSpaceTooLarge(f"joint space {total} exceeds {limit}")

    clusters = sorted(c.id for c in spec.clusters)
    domains = sorted(spec.domains())
    free = np.array([base.state.free(c) for c in clusters], dtype=np.int64)
    levels = sorted({p.config_level for c in cands for p in c})

    cols = []
    for w, cs in zip(dnns, cands):
        m = len(cs) + 1
        col = {
            "use": np.zeros((m, len(clusters)), dtype=np.int64),
            "dfreq": np.zeros((m, len(domains)), dtype=np.int64),
            "power": np.zeros(m),
            "flag": np.ones(m, dtype=np.int64),
            "negu": np.zeros(m),
            "energy": np.zeros(m),
            "time": np.zeros(m),
            "freq": np.zeros(m, dtype=np.int64),
            "cluster": np.zeros(m, dtype=np.int64),
            "cores": np.zeros(m, dtype=np.int64),
            "level": np.zeros(m, dtype=np.int64),
        }
        for k, p in enumerate(cs):
            for cid, n in spec.footprint(p.resource).items():
                col["use"][k, clusters.index(cid)] += n
            col["dfreq"][k, domains.index(spec.domain_of(p.resource.cluster_id))] = p.resource.freq_mhz
            col["power"][k] = p.power
            col["flag"][k] = 0
            col["negu"][k] = -accuracy_utility(p, w.budgets)
            col["energy"][k] = p.energy
            col["time"][k] = p.exec_time
            col["freq"][k] = p.resource.freq_mhz
            col["cluster"][k] = clusters.index(p.resource.cluster_id)
            col["cores"][k] = p.resource.core_count
            col["level"][k] = levels.index(p.config_level)
        cols.append(col)

    best_key = None
    best_combo = None
    chunk = 1 << 20
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk))
        idx = np.unravel_index(flat, shape)
        use = sum(col["use"][ix] for col, ix in zip(cols, idx))
        ok = np.all(use <= free, axis=1)
        power = np.zeros(len(flat))
        for col, ix in zip(cols, idx):
            power = power + col["power"][ix]
        ok &= power <= base.power_left
        for d, dom in enumerate(domains):
            fs = np.stack([col["dfreq"][ix, d] for col, ix in zip(cols, idx)], axis=1)
            hi = fs.max(axis=1)
            lo = np.where(fs > 0, fs, np.iinfo(np.int64).max).min(axis=1)
            used = hi > 0
            same = ~used | (lo == hi)
            if dom in base.pinned:
                same &= ~used | (hi == base.pinned[dom])
            ok &= same
        if not ok.any():
            continue
        sel = [ix[ok] for ix in idx]
        keys = []
        for col, ix in zip(cols, sel):
            keys += [col["flag"][ix], col["negu"][ix]]
        for col, ix in zip(cols, sel):
            keys += [col[k][ix] for k in ("energy", "time", "freq", "cluster", "cores", "freq", "level")]
        order = np.lexsort(keys[::-1])
        j = order[0]
        key = tuple(k[j].item() for k in keys)
        if best_key is None or key < best_key:
            best_key = key
            best_combo = [int(ix[j]) for ix in sel]

    chosen: list[Optional[OperatingPoint]]
    if best_combo is None:
        chosen = [None] * len(dnns)
    else:
        chosen = [cs[k] if k < len(cs) else None for cs, k in zip(cands, best_combo)]
    return _build_decision(base, dnns, chosen, "brute-force", None)


# --------------------------------------------------------------------------
# runtime: knobs, monitors, events

@dataclass(frozen=True)
class Knob:
    config_level: Fraction  # application knob
    slot: ResourceSlot  # device knobs: mapping and frequency


@dataclass(frozen=True)
class Reading:
    exec_time: float
    energy: float
    power: float
    accuracy: float


@dataclass(frozen=True)
class Monitors:
    readings: Mapping[str, Reading]
    total_power: float
    power_budget: float
    pending: tuple = ()
    unplaced: tuple[str, ...] = ()  # live DNNs the last decision could not place


@dataclass(frozen=True)
class RuntimeState:
    """Everything the governor reads: platform, declared workloads and
    their tables, which of them are live, and the current power ceiling."""

    platform: PlatformState
    workloads: Mapping[str, Workload]
    tables: Mapping[str, OperatingPointTable]
    live: tuple[str, ...] = ()
    power_budget: float = 0.0
    at_ms: int = 0

    def live_workloads(self) -> list[Workload]:
        return [self.workloads[i] for i in self.live]


def knobs_of(decision: Decision) -> dict[str, Knob]:
    return {wid: Knob(p.config_level, slot) for wid, (p, slot) in sorted(decision.assignments.items())}


def monitors_of(decision: Decision, power_budget: float, pending: tuple = ()) -> Monitors:
    readings = {wid: Reading(p.exec_time, p.energy, p.power, p.accuracy)
                for wid, (p, _) in sorted(decision.assignments.items())}
    return Monitors(readings, decision.total_power, power_budget, pending, tuple(sorted(decision.infeasible)))


def apply_event(event, state: RuntimeState) -> RuntimeState:
    """State after ``event``; see ``edge_rtm.sim.ScenarioEvent`` for the kinds."""
    kind = event.kind
    workloads = dict(state.workloads)
    live = list(state.live)
    platform = state.platform
    budget = state.power_budget
    if kind == "arrival":
        if event.workload_id not in live:
            live.append(event.workload_id)
            order = list(workloads)
            live.sort(key=order.index)
    elif kind == "exit":
        if event.workload_id in live:
            live.remove(event.workload_id)
        if event.workload_id in platform.owners():
            platform = release(platform, event.workload_id)
    elif kind == "budget_change":
        workloads[event.workload_id] = replace(workloads[event.workload_id], budgets=event.budgets)
    elif kind == "accuracy_requirement_change":
        w = workloads[event.workload_id]
        workloads[event.workload_id] = replace(w, budgets=replace(w.budgets, acc_min=event.value))
    elif kind == "power_budget_change":
        budget = event.value
    else:
        raise ValueError(f"unknown event kind {kind!r}")
    return replace(state, platform=platform, workloads=workloads, live=tuple(live),
                   power_budget=budget, at_ms=max(state.at_ms, event.at_ms))


def _change_tags(old: Decision, new: Decision) -> list[str]:
    tags = []
    for wid, (p, slot) in sorted(new.assignments.items()):
        prev = old.assignments.get(wid)
        if prev is None:
            continue
        if prev[1].cluster_id != slot.cluster_id or prev[1].core_count != slot.core_count:
            tags.append(f"migrate:{wid}")
        elif prev[1].freq_mhz != slot.freq_mhz:
            tags.append(f"dvfs:{wid}")
        if prev[0].config_level != p.config_level:
            tags.append(f"scale:{wid}")
    for wid in sorted(old.assignments):
        if wid in new.infeasible:
            tags.append(f"released:{wid}")
    return tags


def event_tag(event) -> str:
    if getattr(event, "workload_id", None):
        return f"{event.kind}:{event.workload_id}"
    return event.kind


def handle_event(event, state: RuntimeState, decision: Decision = EMPTY_DECISION, *,
                 exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> Decision:
    """Re-plan after ``event`` (applied to ``state`` first)."""
    new_state = apply_event(event, state)
    d = allocate_all(new_state.live_workloads(), new_state.platform, new_state.tables,
                     new_state.power_budget, exhaustive_limit=exhaustive_limit, trigger=event_tag(event))
    return replace(d, rationale=d.rationale + tuple(_change_tags(decision, d)))


def _steady(monitors: Monitors, knobs: Mapping[str, Knob], state: RuntimeState) -> bool:
    if monitors.pending or monitors.total_power > monitors.power_budget:
        return False
    if monitors.power_budget != state.power_budget:
        return False
    dnns = [w for w in state.live_workloads() if isinstance(w, DnnWorkload) and w.id not in monitors.unplaced]
    if set(knobs) != {w.id for w in dnns}:
        return False
    for w in dnns:
        r = monitors.readings.get(w.id)
        if r is None:
            return False
        b = w.budgets
        if r.exec_time > b.t_max or r.energy > b.e_max or r.power > b.p_max or r.accuracy < b.acc_min:
            return False
    return True


def control_step(monitors: Monitors, knobs: Mapping[str, Knob], state: RuntimeState, *,
                 exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> tuple[Mapping[str, Knob], Decision]:
    """One pass of the control loop.

    When every budget and the power ceiling are met and nothing is pending
    the knobs are held as they are. Otherwise the governor re-plans, and
    the knobs only move if the new plan differs.
    """
    if _steady(monitors, knobs, state):
        assignments = {}
        for wid, k in knobs.items():
            p = state.tables[wid].get(wid, k.config_level, k.slot)
            assignments[wid] = (p, k.slot)
        d = Decision(assignments, tuple(monitors.unplaced), ("hold",), {}, state.platform, monitors.total_power)
        return knobs, d
    for ev in monitors.pending:
        state = apply_event(ev, state)
    d = allocate_all(state.live_workloads(), state.platform, state.tables, state.power_budget,
                     exhaustive_limit=exhaustive_limit, trigger="control")
    new = knobs_of(d)
    if new == dict(knobs):
        return knobs, replace(d, rationale=d.rationale + ("no-actuation",))
    return new, d
