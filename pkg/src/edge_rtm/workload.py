"""Workloads competing for the SoC: width-scalable DNNs and opaque applications."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Optional, Union

from edge_rtm.opspace import Budgets, OperatingPointTable, ResourceSlot

DEFAULT_LADDER: tuple[Fraction, ...] = (Fraction(1, 4), Fraction(2, 4), Fraction(3, 4), Fraction(1))


class LadderError(ValueError):
    """Configuration level not on the workload's ladder."""


class LifecycleError(ValueError):
    """Workload queried outside its [arrival, exit) window."""


@dataclass(frozen=True)
class ReconfigCost:
    switch_time: float = 0.0  # ms per ladder step
    switch_energy: float = 0.0  # mJ per ladder step

    def __post_init__(self):
        if self.switch_time < 0 or self.switch_energy < 0:
            raise ValueError("reconfiguration costs must be >= 0")


# A dynamic DNN keeps every configuration in one set of weights, so a level
# change needs no model swap.
NO_SWITCH_COST = ReconfigCost()


@dataclass(frozen=True)
class DnnWorkload:
    id: str
    config_ladder: tuple[Fraction, ...]
    accuracy_by_level: Mapping[Fraction, float]
    budgets: Budgets = Budgets()
    arrival_ms: int = 0
    exit_ms: Optional[int] = None
    active_level: Optional[Fraction] = None
    reconfig: ReconfigCost = NO_SWITCH_COST

    def __post_init__(self):
        ladder = tuple(Fraction(x) for x in self.config_ladder)
        object.__setattr__(self, "config_ladder", ladder)
        if not ladder or any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise LadderError(f"{self.id}: ladder must be non-empty and strictly ascending")
        if not all(0 < x <= 1 for x in ladder):
            raise LadderError(f"{self.id}: ladder levels must lie in (0, 1]")
        acc = {Fraction(k): float(v) for k, v in self.accuracy_by_level.items()}
        if set(acc) != set(ladder):
            raise LadderError(f"{self.id}: accuracy_by_level must cover exactly the ladder")
        accs = [acc[x] for x in ladder]
        if any(b < a for a, b in zip(accs, accs[1:])):
            raise LadderError(f"{self.id}: accuracy must be non-decreasing in level")
        object.__setattr__(self, "accuracy_by_level", acc)
        if self.active_level is not None and Fraction(self.active_level) not in ladder:
            raise LadderError(f"{self.id}: active level {self.active_level} off ladder")
        if self.exit_ms is not None and self.exit_ms <= self.arrival_ms:
            raise ValueError(f"{self.id}: exit_ms must be after arrival_ms")

    def __hash__(self):
        return hash((self.id, self.config_ladder, self.budgets, self.arrival_ms, self.exit_ms, self.active_level))

    @classmethod
    def from_table(cls, workload_id: str, table: OperatingPointTable, **kwargs) -> "DnnWorkload":
        """Derive ladder and per-level accuracy from a validated table."""
        points = table.for_workload(workload_id)
        if not len(points):
            raise LadderError(f"table has no points for {workload_id!r}")
        acc = {p.config_level: p.accuracy for p in points}
        ladder = kwargs.pop("config_ladder", None)
        if ladder is not None and tuple(Fraction(x) for x in ladder) != points.ladder():
            raise LadderError(f"{workload_id}: declared ladder does not match the table's levels")
        return cls(workload_id, points.ladder(), acc, **kwargs)

    @property
    def priority_key(self) -> tuple[float, str]:
        """Sort key; smaller means higher priority (strictest latency first)."""
        return (self.budgets.t_max, self.id)

    @property
    def accuracy(self) -> Optional[float]:
        if self.active_level is None:
            return None
        return self.accuracy_by_level[self.active_level]

    def rank(self, level) -> int:
        try:
            return self.config_ladder.index(Fraction(level))
        except ValueError:
            raise LadderError(f"{self.id}: level {level} not on ladder") from None

    def alive(self, at_ms: int) -> bool:
        return self.arrival_ms <= at_ms and (self.exit_ms is None or at_ms < self.exit_ms)


@dataclass(frozen=True)
class OpaqueWorkload:
    id: str
    fixed_demand: ResourceSlot
    fixed_power: float  # mW
    arrival_ms: int = 0
    exit_ms: Optional[int] = None

    def __post_init__(self):
        if self.fixed_power < 0:
            raise ValueError(f"{self.id}: fixed_power must be >= 0")
        if self.exit_ms is not None and self.exit_ms <= self.arrival_ms:
            raise ValueError(f"{self.id}: exit_ms must be after arrival_ms")

    @property
    def priority_key(self) -> tuple[float, str]:
        return (-math.inf, self.id)

    def alive(self, at_ms: int) -> bool:
        return self.arrival_ms <= at_ms and (self.exit_ms is None or at_ms < self.exit_ms)


Workload = Union[DnnWorkload, OpaqueWorkload]


class _GovernorChosen:
    """Marker: the governor picks a DNN's slot from its operating-point table."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "GOVERNOR_CHOSEN"


GOVERNOR_CHOSEN = _GovernorChosen()


def scale(workload: DnnWorkload, level) -> DnnWorkload:
    """Set the active configuration level. No retraining is involved, so
    returning to an earlier level restores its accuracy exactly."""
    level = Fraction(level)
    if level not in workload.config_ladder:
        raise LadderError(f"{workload.id}: level {level} not on ladder {[str(x) for x in workload.config_ladder]}")
    if workload.active_level == level:
        return workload
    return replace(workload, active_level=level)


def switch_cost(from_level, to_level, cost: ReconfigCost = NO_SWITCH_COST,
                ladder: tuple[Fraction, ...] = DEFAULT_LADDER) -> tuple[float, float]:
    """(ms, mJ) spent moving between two ladder levels."""
    try:
        steps = abs(ladder.index(Fraction(from_level)) - ladder.index(Fraction(to_level)))
    except ValueError:
        raise LadderError(f"levels {from_level}, {to_level} must both be on the ladder") from None
    return (steps * cost.switch_time, steps * cost.switch_energy)


def active_demand(workload: Workload, at_ms: int):
    if not workload.alive(at_ms):
        raise LifecycleError(f"{workload.id} is not alive at {at_ms} ms")
    if isinstance(workload, OpaqueWorkload):
        return workload.fixed_demand
    return GOVERNOR_CHOSEN
