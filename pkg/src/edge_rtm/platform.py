"""Heterogeneous SoC model: clusters, shared frequency domains, NPU capacity,
and functional allocation state."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

from edge_rtm.opspace import OperatingPoint, ResourceSlot

CLUSTER_KINDS = ("cpu", "gpu", "npu")

# An NPU slot co-allocates this many cores of the platform's companion CPU
# cluster for pre-processing. The companion core adds no power.
NPU_COMPANION_CORES = 1


class PlatformError(ValueError):
    """Invalid platform description or state transition."""


class ContentionError(PlatformError):
    """Requested cores or NPU units are not free."""


@dataclass(frozen=True)
class ClusterSpec:
    id: str
    kind: str
    core_count: int
    freq_levels: tuple[int, ...]
    domain_id: str
    npu_capacity: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "freq_levels", tuple(self.freq_levels))
        if self.kind not in CLUSTER_KINDS:
            raise PlatformError(f"cluster {self.id}: unknown kind {self.kind!r}")
        if self.core_count < 1:
            raise PlatformError(f"cluster {self.id}: core_count must be >= 1")
        if not self.freq_levels:
            raise PlatformError(f"cluster {self.id}: freq_levels must be non-empty")
        if any(b <= a for a, b in zip(self.freq_levels, self.freq_levels[1:])):
            raise PlatformError(f"cluster {self.id}: freq_levels must be strictly ascending")
        if self.kind == "npu":
            if self.npu_capacity is None or self.npu_capacity < 1:
                raise PlatformError(f"cluster {self.id}: npu_capacity must be >= 1")
        elif self.npu_capacity is not None:
            raise PlatformError(f"cluster {self.id}: npu_capacity only applies to npu clusters")

    @property
    def capacity(self) -> int:
        """Allocatable units: cores, or capacity units for an NPU."""
        return self.npu_capacity if self.kind == "npu" else self.core_count


@dataclass(frozen=True)
class PlatformSpec:
    name: str
    clusters: tuple[ClusterSpec, ...]
    power_budget: float  # mW, thermal proxy ceiling
    npu_companion: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        ids = [c.id for c in self.clusters]
        if len(set(ids)) != len(ids):
            raise PlatformError("cluster ids must be unique")
        if not self.clusters:
            raise PlatformError("platform needs at least one cluster")
        if self.power_budget < 0:
            raise PlatformError("power_budget must be >= 0")
        for dom, members in self.domains().items():
            if len({c.freq_levels for c in members}) > 1:
                raise PlatformError(f"domain {dom}: member clusters must share one frequency ladder")
        if self.npu_companion is not None:
            comp = self.cluster(self.npu_companion)
            if comp.kind != "cpu":
                raise PlatformError("npu_companion must name a cpu cluster")

    def cluster(self, cluster_id: str) -> ClusterSpec:
        for c in self.clusters:
            if c.id == cluster_id:
                return c
        raise PlatformError(f"unknown cluster {cluster_id!r}")

    def has_cluster(self, cluster_id: str) -> bool:
        return any(c.id == cluster_id for c in self.clusters)

    def domains(self) -> dict[str, list[ClusterSpec]]:
        out: dict[str, list[ClusterSpec]] = {}
        for c in self.clusters:
            out.setdefault(c.domain_id, []).append(c)
        return out

    def domain_of(self, cluster_id: str) -> str:
        return self.cluster(cluster_id).domain_id

    def check_slot(self, slot: ResourceSlot) -> None:
        c = self.cluster(slot.cluster_id)
        if not 1 <= slot.core_count <= c.capacity:
            raise PlatformError(f"{slot}: {c.id} offers at most {c.capacity} units")
        if slot.freq_mhz not in c.freq_levels:
            raise PlatformError(f"{slot}: {slot.freq_mhz} MHz is not a level of {c.id}")

    def slot_valid(self, slot: ResourceSlot) -> bool:
        try:
            self.check_slot(slot)
        except PlatformError:
            return False
        return True

    def footprint(self, slot: ResourceSlot) -> dict[str, int]:
        """Units consumed per cluster by ``slot``, including NPU companion cores."""
        fp = {slot.cluster_id: slot.core_count}
        if self.npu_companion and self.cluster(slot.cluster_id).kind == "npu":
            fp[self.npu_companion] = fp.get(self.npu_companion, 0) + NPU_COMPANION_CORES
        return fp

    def to_json(self) -> dict:
        clusters = []
        for c in self.clusters:
            obj = {
                "id": c.id,
                "kind": c.kind,
                "core_count": c.core_count,
                "freq_levels_mhz": list(c.freq_levels),
                "domain_id": c.domain_id,
            }
            if c.npu_capacity is not None:
                obj["npu_capacity"] = c.npu_capacity
            clusters.append(obj)
        out = {"name": self.name, "power_budget_mw": self.power_budget, "clusters": clusters}
        if self.npu_companion:
            out["npu_companion"] = self.npu_companion
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "PlatformSpec":
        try:
            clusters = [
                ClusterSpec(
                    id=str(c["id"]),
                    kind=c["kind"],
                    core_count=int(c["core_count"]),
                    freq_levels=tuple(int(f) for f in c["freq_levels_mhz"]),
                    domain_id=str(c["domain_id"]),
                    npu_capacity=c.get("npu_capacity"),
                )
                for c in obj["clusters"]
            ]
            return cls(
                name=str(obj["name"]),
                clusters=tuple(clusters),
                power_budget=float(obj["power_budget_mw"]),
                npu_companion=obj.get("npu_companion"),
            )
        except (KeyError, TypeError) as exc:
            raise PlatformError(f"malformed platform definition: {exc!r}") from None


def _ladder(lo: int, hi: int, step: int) -> tuple[int, ...]:
    return tuple(range(lo, hi + 1, step))


BUILTIN_PLATFORMS: dict[str, PlatformSpec] = {
    "odroid-xu3": PlatformSpec(
        name="odroid-xu3",
        clusters=(
            ClusterSpec("a15", "cpu", 4, _ladder(200, 1800, 100), "a15"),
            ClusterSpec("a7", "cpu", 4, _ladder(200, 1300, 100), "a7"),
        ),
        power_budget=6000.0,
    ),
    # Only the frequencies that were actually measured.
    "jetson-nano": PlatformSpec(
        name="jetson-nano",
        clusters=(
            ClusterSpec("a57", "cpu", 4, (921, 1430), "a57"),
            ClusterSpec("gpu", "gpu", 1, (614, 921), "gpu"),
        ),
        power_budget=10000.0,
    ),
    "generic-npu-soc": PlatformSpec(
        name="generic-npu-soc",
        clusters=(
            ClusterSpec("big", "cpu", 4, (800, 1400, 2000), "big"),
            ClusterSpec("little", "cpu", 4, (600, 1200, 1800), "little"),
            ClusterSpec("gpu", "gpu", 1, (400, 800), "gpu"),
            ClusterSpec("npu", "npu", 1, (1000,), "npu", npu_capacity=2),
        ),
        power_budget=10000.0,
        npu_companion="little",
    ),
}


def builtin_platform(name: str) -> PlatformSpec:
    try:
        return BUILTIN_PLATFORMS[name]
    except KeyError:
        known = ", ".join(sorted(BUILTIN_PLATFORMS))
        raise PlatformError(f"unknown platform {name!r} (known: {known})") from None


def dump_platform(spec: PlatformSpec) -> str:
    return json.dumps(spec.to_json(), indent=2) + "\n"


# --------------------------------------------------------------------------
# state

@dataclass(frozen=True)
class PlatformState:
    """Frequency per domain plus exclusive holdings.

    ``holdings`` is a sorted tuple of (cluster_id, owner, units). The
    frequency is stored once per domain, so every member cluster of a
    domain necessarily reports the same value.
    """

    spec: PlatformSpec
    domain_freq: tuple[tuple[str, int], ...]
    holdings: tuple[tuple[str, str, int], ...] = ()
    total_power: float = 0.0

    @classmethod
    def initial(cls, spec: PlatformSpec) -> "PlatformState":
        freqs = tuple(sorted((d, members[0].freq_levels[0]) for d, members in spec.domains().items()))
        return cls(spec, freqs)

    def freq_of_domain(self, domain_id: str) -> int:
        for d, f in self.domain_freq:
            if d == domain_id:
                return f
        raise PlatformError(f"unknown domain {domain_id!r}")

    def cluster_freq(self, cluster_id: str) -> int:
        return self.freq_of_domain(self.spec.domain_of(cluster_id))

    def used(self, cluster_id: str) -> int:
        return sum(n for c, _, n in self.holdings if c == cluster_id)

    def free(self, cluster_id: str) -> int:
        return self.spec.cluster(cluster_id).capacity - self.used(cluster_id)

    def owners(self, cluster_id: Optional[str] = None) -> list[str]:
        return sorted({o for c, o, _ in self.holdings if cluster_id is None or c == cluster_id})

    def holdings_of(self, owner: str) -> dict[str, int]:
        out: dict[str, int] = {}
        for c, o, n in self.holdings:
            if o == owner:
                out[c] = out.get(c, 0) + n
        return out

    def with_power(self, total_power: float) -> "PlatformState":
        return replace(self, total_power=total_power)


def set_frequency(state: PlatformState, domain_id: str, freq_mhz: int) -> PlatformState:
    members = state.spec.domains().get(domain_id)
    if members is None:
        raise PlatformError(f"unknown domain {domain_id!r}")
    for c in members:
        if freq_mhz not in c.freq_levels:
            raise PlatformError(f"{freq_mhz} MHz is not a level of cluster {c.id} in domain {domain_id}")
    if state.freq_of_domain(domain_id) == freq_mhz:
        return state
    freqs = tuple((d, freq_mhz if d == domain_id else f) for d, f in state.domain_freq)
    return replace(state, domain_freq=freqs)


def allocate(state: PlatformState, workload_id: str, slot: ResourceSlot) -> PlatformState:
    """Grant ``slot`` (and any NPU companion core) exclusively to ``workload_id``.

    The slot's frequency must match its domain's current frequency; set it
    first with :func:`set_frequency`.
    """
    spec = state.spec
    spec.check_slot(slot)
    current = state.cluster_freq(slot.cluster_id)
    if current != slot.freq_mhz:
        raise PlatformError(
            f"{slot}: domain {spec.domain_of(slot.cluster_id)} runs at {current} MHz; set the frequency first"
        )
    fp = spec.footprint(slot)
    for cid, n in fp.items():
        if state.free(cid) < n:
            raise ContentionError(f"{workload_id}: needs {n} unit(s) of {cid}, {state.free(cid)} free")
    merged = dict(((c, o), n) for c, o, n in state.holdings)
    for cid, n in fp.items():
        merged[(cid, workload_id)] = merged.get((cid, workload_id), 0) + n
    holdings = tuple(sorted((c, o, n) for (c, o), n in merged.items()))
    return replace(state, holdings=holdings)


def release(state: PlatformState, workload_id: str) -> PlatformState:
    if not any(o == workload_id for _, o, _ in state.holdings):
        raise PlatformError(f"{workload_id!r} holds no resources")
    return replace(state, holdings=tuple(h for h in state.holdings if h[1] != workload_id))


def total_power(state: Optional[PlatformState], assignments: Iterable[tuple[str, OperatingPoint]]) -> float:
    """Sum of assigned points' power in mW (exactly rounded, so order-free)."""
    return math.fsum(p.power for _, p in assignments)


def thermal_ok(spec: PlatformSpec, power: float, ceiling: Optional[float] = None) -> bool:
    """Inclusive check of ``power`` against the thermal ceiling.

    ``ceiling`` overrides ``spec.power_budget`` when a scenario has changed it.
    """
    limit = spec.power_budget if ceiling is None else ceiling
    return power <= limit
