"""Operating-point data: ingestion, validation, dominance and budget filtering.

An operating point is one (configuration level, resource slot) pair for a
workload together with its measured or modelled execution time, power,
energy and top-1 accuracy. Tables are immutable; every operation here is a
pure function.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Optional, Sequence

# Energy is stored, not recomputed. This is the admissible relative gap
# between the stored value and power * time.
ENERGY_TOLERANCE = 0.05

CSV_COLUMNS = (
    "workload_id",
    "platform",
    "cluster",
    "cores",
    "freq_mhz",
    "config_pct",
    "time_ms",
    "power_mw",
    "energy_mj",
    "top1_acc",
)


class DomainError(ValueError):
    """A numeric argument is outside the domain of the operation."""


class UsageError(ValueError):
    """Operation called with arguments that violate its precondition."""


class TableError(ValueError):
    """Base class for table ingestion failures.

    ``diagnostics`` holds one human-readable line per offending row.
    """

    kind = "table-error"

    def __init__(self, message: str, diagnostics: Sequence[str] = ()):
        super().__init__(message)
        self.diagnostics = list(diagnostics) or [message]


class TableParseError(TableError):
    kind = "parse-error"


class DuplicateKeyError(TableError):
    kind = "duplicate-key"


class InvariantViolation(TableError):
    kind = "invariant-violation"


@dataclass(frozen=True, order=True)
class ResourceSlot:
    """A mapping plus frequency: ``core_count`` cores of ``cluster_id`` at ``freq_mhz``.

    For an NPU cluster ``core_count`` counts capacity units.
    """

    cluster_id: str
    core_count: int
    freq_mhz: int

    def key(self) -> tuple[str, int, int]:
        return (self.cluster_id, self.core_count, self.freq_mhz)

    def __str__(self) -> str:
        return f"{self.cluster_id}x{self.core_count}@{self.freq_mhz}MHz"


@dataclass(frozen=True)
class OperatingPoint:
    workload_id: str
    config_level: Fraction
    resource: ResourceSlot
    exec_time: float  # ms
    power: float  # mW
    energy: float  # mJ
    accuracy: float  # top-1 %
    platform: str = ""

    def key(self) -> tuple[str, Fraction, ResourceSlot]:
        return (self.workload_id, self.config_level, self.resource)

    @property
    def config_pct(self) -> Fraction:
        return self.config_level * 100

    def energy_gap(self) -> float:
        """Relative gap between stored energy and power * time."""
        return abs(self.energy - energy_of(self.power, self.exec_time)) / self.energy


class OperatingPointTable(Sequence[OperatingPoint]):
    """Ordered, immutable collection of operating points with unique keys.

    Construction only rejects duplicate keys; the full set of data
    invariants is checked by :meth:`validate` (``load_table`` always runs it).
    """

    __slots__ = ("_points", "_index")

    def __init__(self, points: Iterable[OperatingPoint] = ()):
        pts = tuple(points)
        index: dict[tuple, OperatingPoint] = {}
        dupes = []
        for i, p in enumerate(pts, start=1):
            if p.key() in index:
                dupes.append(f"row {i}: duplicate key {_fmt_key(p)}")
            index[p.key()] = p
        if dupes:
            raise DuplicateKeyError(dupes[0], dupes)
        self._points = pts
        self._index = index

    def __getitem__(self, i):  # type: ignore[override]
        if isinstance(i, slice):
            return OperatingPointTable(self._points[i])
        return self._points[i]

    def __len__(self) -> int:
        return len(self._points)

    def __iter__(self) -> Iterator[OperatingPoint]:
        return iter(self._points)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, OperatingPointTable):
            return self._points == other._points
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._points)

    def __repr__(self) -> str:
        return f"OperatingPointTable({len(self)} points)"

    @property
    def points(self) -> tuple[OperatingPoint, ...]:
        return self._points

    def get(self, workload_id: str, config_level: Fraction, resource: ResourceSlot) -> Optional[OperatingPoint]:
        if type(config_level) is not Fraction:
            config_level = Fraction(config_level)
        return self._index.get((workload_id, config_level, resource))

    def workload_ids(self) -> list[str]:
        return sorted({p.workload_id for p in self._points})

    def for_workload(self, workload_id: str) -> "OperatingPointTable":
        return OperatingPointTable(p for p in self._points if p.workload_id == workload_id)

    def ladder(self) -> tuple[Fraction, ...]:
        return tuple(sorted({p.config_level for p in self._points}))

    def validate(self) -> list[str]:
        """Return row-numbered diagnostics for every violated data invariant."""
        return validate_points(self._points)


@dataclass(frozen=True)
class Budgets:
    t_max: float = math.inf  # ms
    e_max: float = math.inf  # mJ
    p_max: float = math.inf  # mW
    acc_min: float = 0.0  # %

    def __post_init__(self):
        for name in ("t_max", "e_max", "p_max", "acc_min"):
            v = getattr(self, name)
            if math.isnan(v) or v < 0:
                raise DomainError(f"budget {name} must be >= 0, got {v}")

    def bounded(self) -> bool:
        return any(math.isfinite(v) for v in (self.t_max, self.e_max, self.p_max)) or self.acc_min > 0

    def admits(self, p: OperatingPoint) -> bool:
        return (
            p.exec_time <= self.t_max
            and p.energy <= self.e_max
            and p.power <= self.p_max
            and p.accuracy >= self.acc_min
        )

    def to_json(self) -> dict:
        out = {}
        for name, key in (("t_max", "t_max_ms"), ("e_max", "e_max_mj"), ("p_max", "p_max_mw")):
            v = getattr(self, name)
            if math.isfinite(v):
                out[key] = v
        if self.acc_min:
            out["acc_min"] = self.acc_min
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Budgets":
        unknown = set(obj) - {"t_max_ms", "e_max_mj", "p_max_mw", "acc_min"}
        if unknown:
            raise UsageError(f"unknown budget fields: {', '.join(sorted(unknown))}")

        def num(k, default):
            v = obj.get(k)
            if v is None:
                return default
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise UsageError(f"budget {k} must be a number")
            return float(v)

        return cls(
            t_max=num("t_max_ms", math.inf),
            e_max=num("e_max_mj", math.inf),
            p_max=num("p_max_mw", math.inf),
            acc_min=num("acc_min", 0.0),
        )


def energy_of(power: float, time: float) -> float:
    """Energy in mJ of running at ``power`` mW for ``time`` ms."""
    if not power > 0 or not time > 0:
        raise DomainError(f"power and time must be positive, got power={power}, time={time}")
    return power * time / 1000.0


def dominates(a: OperatingPoint, b: OperatingPoint) -> bool:
    """True iff ``a`` is no worse than ``b`` in time, energy, power and
    accuracy, and strictly better in at least one of them."""
    if a.workload_id != b.workload_id:
        raise UsageError(f"cannot compare points of {a.workload_id!r} and {b.workload_id!r}")
    if a.exec_time > b.exec_time or a.energy > b.energy or a.power > b.power or a.accuracy < b.accuracy:
        return False
    return a.exec_time < b.exec_time or a.energy < b.energy or a.power < b.power or a.accuracy > b.accuracy


def frontier_order(p: OperatingPoint) -> tuple:
    return (p.exec_time, p.energy, p.resource.key(), p.config_level)


def _single_workload(table: Iterable[OperatingPoint]) -> None:
    ids = {p.workload_id for p in table}
    if len(ids) > 1:
        raise UsageError(f"table mixes workloads: {', '.join(sorted(ids))}")


def pareto_frontier(table: OperatingPointTable) -> OperatingPointTable:
    """Points not dominated in (time, energy, power, -accuracy).

    Sorting by the objective vector guarantees any dominator of a point
    precedes it, so each candidate only needs checking against the
    frontier accepted so far.
    """
    _single_workload(table)
    ordered = sorted(table, key=lambda p: (p.exec_time, p.energy, p.power, -p.accuracy))
    front: list[OperatingPoint] = []
    for p in ordered:
        if not any(dominates(q, p) for q in front):
            front.append(p)
    front.sort(key=frontier_order)
    return OperatingPointTable(front)


def feasible_points(table: OperatingPointTable, budgets: Budgets) -> OperatingPointTable:
    return OperatingPointTable(p for p in table if budgets.admits(p))


# --------------------------------------------------------------------------
# validation

def _fmt_key(p: OperatingPoint) -> str:
    return f"({p.workload_id}, {_fmt_pct(p.config_pct)}%, {p.resource})"


def validate_points(points: Sequence[OperatingPoint]) -> list[str]:
    problems: list[tuple[int, str]] = []
    for i, p in enumerate(points, start=1):
        if not p.exec_time > 0:
            problems.append((i, f"time_ms must be > 0, got {p.exec_time}"))
        if not p.power > 0:
            problems.append((i, f"power_mw must be > 0, got {p.power}"))
        if not p.energy > 0:
            problems.append((i, f"energy_mj must be > 0, got {p.energy}"))
        if not 0 <= p.accuracy <= 100:
            problems.append((i, f"top1_acc must lie in [0, 100], got {p.accuracy}"))
        if not 0 < p.config_level <= 1:
            problems.append((i, f"config_pct must lie in (0, 100], got {_fmt_pct(p.config_pct)}"))
        if p.exec_time > 0 and p.power > 0 and p.energy > 0:
            gap = p.energy_gap()
            if gap > ENERGY_TOLERANCE:
                problems.append(
                    (i, f"energy_mj {p.energy} deviates {gap:.1%} from power*time "
                        f"{energy_of(p.power, p.exec_time):.4g} (limit {ENERGY_TOLERANCE:.0%})")
                )

    rows = {id(p): i for i, p in enumerate(points, start=1)}

    # accuracy is a property of (workload, level), independent of the resource
    by_level: dict[tuple, list[OperatingPoint]] = defaultdict(list)
    for p in points:
        by_level[(p.workload_id, p.config_level)].append(p)
    for (_, _), group in by_level.items():
        ref = group[0]
        for p in group[1:]:
            if p.accuracy != ref.accuracy:
                problems.append((rows[id(p)], f"top1_acc {p.accuracy} differs from {ref.accuracy} "
                                              f"(row {rows[id(ref)]}) at the same level"))

    # monotone scaling: per fixed resource, accuracy and time non-decreasing in level
    by_resource: dict[tuple, list[OperatingPoint]] = defaultdict(list)
    for p in points:
        by_resource[(p.workload_id, p.resource)].append(p)
    for group in by_resource.values():
        group = sorted(group, key=lambda p: p.config_level)
        for lo, hi in zip(group, group[1:]):
            if hi.accuracy < lo.accuracy:
                problems.append((rows[id(hi)], f"top1_acc decreases from {lo.accuracy} to {hi.accuracy} "
                                               f"as level rises on {hi.resource}"))
            if hi.exec_time < lo.exec_time:
                problems.append((rows[id(hi)], f"time_ms decreases from {lo.exec_time} to {hi.exec_time} "
                                               f"as level rises on {hi.resource}"))
    problems.sort(key=lambda x: x[0])
    return [f"row {i}: {msg}" for i, msg in problems]


# --------------------------------------------------------------------------
# serialization

def _fmt_pct(pct: Fraction) -> str:
    return str(pct.numerator) if pct.denominator == 1 else str(pct)


def _fmt_num(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def _row_of(p: OperatingPoint) -> dict[str, str]:
    return {
        "workload_id": p.workload_id,
        "platform": p.platform,
        "cluster": p.resource.cluster_id,
        "cores": str(p.resource.core_count),
        "freq_mhz": str(p.resource.freq_mhz),
        "config_pct": _fmt_pct(p.config_pct),
        "time_ms": _fmt_num(p.exec_time),
        "power_mw": _fmt_num(p.power),
        "energy_mj": _fmt_num(p.energy),
        "top1_acc": _fmt_num(p.accuracy),
    }


def dump_table(table: Iterable[OperatingPoint], fmt: str = "csv") -> str:
    rows = [_row_of(p) for p in table]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "json":
        out = []
        for r in rows:
            obj: dict = {}
            for k, v in r.items():
                if k in ("workload_id", "platform", "cluster"):
                    obj[k] = v
                elif k == "config_pct" and "/" in v:
                    obj[k] = v
                else:
                    obj[k] = json.loads(v)
            out.append(obj)
        return json.dumps(out, indent=1) + "\n"
    raise UsageError(f"unknown format {fmt!r}")


def _parse_records(text: str, fmt: str) -> list[dict]:
    if fmt == "csv":
        if not text.strip():
            raise TableParseError("empty input: header row required")
        reader = csv.DictReader(io.StringIO(text))
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        extra = [c for c in header if c not in CSV_COLUMNS]
        if missing or extra:
            parts = []
            if missing:
                parts.append("missing " + ", ".join(missing))
            if extra:
                parts.append("unexpected " + ", ".join(extra))
            raise TableParseError("bad header: " + "; ".join(parts))
        records = list(reader)
        for i, r in enumerate(records, start=1):
            if None in r or any(v is None for v in r.values()):
                raise TableParseError(f"row {i}: wrong number of fields")
        return records
    if fmt == "json":
        if not text.strip():
            raise TableParseError("empty input")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TableParseError(f"invalid JSON: {exc}") from None
        if not isinstance(data, list):
            raise TableParseError("JSON table must be an array of objects")
        for i, r in enumerate(data, start=1):
            if not isinstance(r, dict):
                raise TableParseError(f"row {i}: expected an object")
            if set(r) != set(CSV_COLUMNS):
                missing = sorted(set(CSV_COLUMNS) - set(r))
                extra = sorted(set(r) - set(CSV_COLUMNS))
                raise TableParseError(f"row {i}: fields mismatch (missing {missing}, unexpected {extra})")
        return [{k: str(v) for k, v in r.items()} for r in data]
    raise UsageError(f"unknown format {fmt!r}")


def _point_of(i: int, r: dict) -> OperatingPoint:
    def num(k):
        try:
            v = float(r[k])
        except ValueError:
            raise TableParseError(f"row {i}: {k} is not a number: {r[k]!r}") from None
        if not math.isfinite(v):
            raise TableParseError(f"row {i}: {k} must be finite")
        return v

    def integer(k):
        try:
            return int(r[k])
        except ValueError:
            raise TableParseError(f"row {i}: {k} is not an integer: {r[k]!r}") from None

    try:
        pct = Fraction(r["config_pct"].strip())
    except (ValueError, ZeroDivisionError):
        raise TableParseError(f"row {i}: config_pct is not a number: {r['config_pct']!r}") from None
    if not r["workload_id"]:
        raise TableParseError(f"row {i}: empty workload_id")
    if not r["cluster"]:
        raise TableParseError(f"row {i}: empty cluster")
    cores = integer("cores")
    freq = integer("freq_mhz")
    if cores < 1 or freq < 1:
        raise InvariantViolation(f"row {i}: cores and freq_mhz must be positive")
    return OperatingPoint(
        workload_id=r["workload_id"],
        config_level=pct / 100,
        resource=ResourceSlot(r["cluster"], cores, freq),
        exec_time=num("time_ms"),
        power=num("power_mw"),
        energy=num("energy_mj"),
        accuracy=num("top1_acc"),
        platform=r["platform"],
    )


def load_table(source, fmt: str = "csv") -> OperatingPointTable:
    """Parse and validate a table from bytes, text, or a binary/text stream.

    Raises TableParseError, DuplicateKeyError or InvariantViolation; each
    carries row-numbered diagnostics.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise TableParseError(f"input is not UTF-8: {exc}") from None
    records = _parse_records(source, fmt)
    if not records:
        raise TableParseError("table has no rows")
    points = [_point_of(i, r) for i, r in enumerate(records, start=1)]
    table = OperatingPointTable(points)
    problems = table.validate()
    if problems:
        raise InvariantViolation(problems[0], problems)
    return table


def load_table_file(path, fmt: Optional[str] = None) -> OperatingPointTable:
    path = str(path)
    if fmt is None:
        fmt = "json" if path.endswith(".json") else "csv"
    with open(path, "rb") as fh:
        return load_table(fh, fmt)
