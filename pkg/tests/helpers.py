"""Independent oracles and random instance generators shared by the tests."""

from __future__ import annotations

import math
import random
from fractions import Fraction

from edge_rtm.opspace import Budgets, OperatingPoint, OperatingPointTable, ResourceSlot
from edge_rtm.platform import ClusterSpec, PlatformSpec, PlatformState, allocate, set_frequency
from edge_rtm.workload import DnnWorkload, OpaqueWorkload

LEVELS = (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1))


def pareto_oracle(points):
    """O(n^2) pairwise check on raw objective tuples."""
    def vec(p):
        return (p.exec_time, p.energy, p.power, -p.accuracy)

    out = []
    for p in points:
        vp = vec(p)
        dominated = False
        for q in points:
            vq = vec(q)
            if all(a <= b for a, b in zip(vq, vp)) and vq != vp:
                dominated = True
                break
        if not dominated:
            out.append(p)
    return out


def scan_select(points, budgets):
    """Linear scan over every point: best accuracy utility, then the tie chain."""
    best = None
    for p in points:
        if p.exec_time > budgets.t_max or p.energy > budgets.e_max or p.power > budgets.p_max:
            continue
        if p.accuracy < budgets.acc_min:
            continue
        u = min(p.accuracy, budgets.acc_min) if budgets.acc_min > 0 else p.accuracy
        key = (-u, p.energy, p.exec_time, p.resource.freq_mhz, p.resource.cluster_id,
               p.resource.core_count, p.resource.freq_mhz, p.config_level)
        if best is None or key < best[0]:
            best = (key, p)
    return None if best is None else best[1]


def random_table(rng: random.Random, n: int, workload_id: str = "w", coarse: bool = True) -> OperatingPointTable:
    """``n`` points with unique keys; coarse values make ties and duplicates likely."""
    keys = set()
    clusters = ["a", "b", "c", "d"]
    while len(keys) < n:
        keys.add((rng.choice(LEVELS), rng.choice(clusters), rng.randint(1, 4), rng.randint(1, 8) * 100))
    pts = []
    for level, c, cores, f in sorted(keys):
        if coarse:
            t, p, acc = rng.randint(1, 12), rng.randint(1, 12), rng.randint(60, 70)
        else:
            t, p, acc = rng.uniform(1, 100), rng.uniform(1, 100), rng.uniform(50, 90)
        e = p * t / 1000 if not coarse else rng.randint(1, 12)
        pts.append(OperatingPoint(workload_id, level, ResourceSlot(c, cores, f), float(t), float(p), float(e),
                                  float(acc)))
    rng.shuffle(pts)
    return OperatingPointTable(pts)


def random_platform(rng: random.Random) -> PlatformSpec:
    n = rng.randint(1, 4)
    clusters = []
    for i in range(n):
        cid = f"c{i}"
        if i > 0 and rng.random() < 0.3 and clusters[-1].kind != "npu":
            prev = clusters[-1]
            clusters.append(ClusterSpec(cid, "cpu", rng.randint(1, 4), prev.freq_levels, prev.domain_id))
            continue
        if i == n - 1 and i > 0 and rng.random() < 0.4:
            clusters.append(ClusterSpec(cid, "npu", 1, (1000,), f"d{i}", npu_capacity=rng.randint(1, 3)))
            continue
        ladder = tuple(sorted(rng.sample([400, 800, 1200, 1600], rng.randint(1, 3))))
        clusters.append(ClusterSpec(cid, rng.choice(["cpu", "gpu"]), rng.randint(1, 4), ladder, f"d{i}"))
    cpus = [c.id for c in clusters if c.kind == "cpu"]
    companion = rng.choice(cpus) if cpus and any(c.kind == "npu" for c in clusters) and rng.random() < 0.7 else None
    return PlatformSpec("rand", tuple(clusters), power_budget=1e9, npu_companion=companion)


def all_slots(spec: PlatformSpec):
    return [ResourceSlot(c.id, k, f) for c in spec.clusters for k in range(1, c.capacity + 1) for f in c.freq_levels]


def random_dnn_table(rng: random.Random, wid: str, spec: PlatformSpec, max_slots: int = 24,
                     max_levels: int = 4) -> OperatingPointTable:
    """A table obeying the monotone scaling contract on a random subset of slots."""
    slots = all_slots(spec)
    slots = rng.sample(slots, rng.randint(1, min(max_slots, len(slots))))
    levels = sorted(rng.sample(LEVELS, rng.randint(1, max_levels)))
    acc = {}
    a = rng.randint(50, 60)
    for lv in levels:
        a += rng.randint(0, 5)
        acc[lv] = float(a)
    pts = []
    for s in slots:
        t = rng.randint(5, 40)
        for lv in levels:
            t += rng.randint(0, 15)
            p = rng.randint(1, 10) * 100
            pts.append(OperatingPoint(wid, lv, s, float(t), float(p), p * t / 1000, acc[lv]))
    return OperatingPointTable(pts)


def random_instance(rng: random.Random, max_workloads: int = 3):
    """Platform state, workloads and tables for allocate_all vs brute force."""
    spec = random_platform(rng)
    state = PlatformState.initial(spec)
    tables, workloads = {}, []
    for i in range(rng.choice([0, 1, 2] + [max_workloads] * 4)):
        wid = f"w{i}"
        table = random_dnn_table(rng, wid, spec)
        tables[wid] = table
        accs = sorted({p.accuracy for p in table})
        budgets = Budgets(
            t_max=rng.choice([math.inf, float(rng.randint(10, 80))]),
            e_max=rng.choice([math.inf, math.inf, float(rng.randint(5, 40))]),
            acc_min=rng.choice([0.0, 0.0, rng.choice(accs)]),
        )
        workloads.append(DnnWorkload.from_table(wid, table, budgets=budgets))
    if rng.random() < 0.3:
        c = rng.choice(spec.clusters)
        slot = ResourceSlot(c.id, 1, rng.choice(c.freq_levels))
        workloads.append(OpaqueWorkload("opaque", slot, float(rng.randint(0, 5) * 100)))
    if rng.random() < 0.2:
        c = rng.choice(spec.clusters)
        f = c.freq_levels[-1]
        state = allocate(set_frequency(state, c.domain_id, f), "background", ResourceSlot(c.id, 1, f))
    rng.shuffle(workloads)
    power_budget = rng.choice([1e9, float(rng.randint(2, 20) * 100)])
    return workloads, state, tables, power_budget


def long_scenario(directory, n_dnn: int = 8, horizon_ms: int = 3_600_000) -> dict:
    """Ten-workload scenario over an hour: ``n_dnn`` DNNs cloned from the
    fig2 tables, two opaque workloads, and periodic budget events."""
    from pathlib import Path
    from edge_rtm import bundled_path

    lines = bundled_path("data/fig2_dnns.csv").read_text().splitlines()
    out = [lines[0]]
    for i in range(n_dnn):
        base = "dnn1," if i % 2 == 0 else "dnn2,"
        out += [f"net{i}," + r[len(base):] for r in lines[1:] if r.startswith(base)]
    Path(directory, "nets.csv").write_text("\n".join(out) + "\n")
    workloads = []
    for i in range(n_dnn):
        w = {"id": f"net{i}", "type": "dnn", "table": "nets.csv",
             "budgets": {"t_max_ms": [60, 100, 200, 400][i % 4]}, "arrival_ms": i * 120_000}
        if i % 3 == 0:
            w["exit_ms"] = horizon_ms - i * 60_000 - 1
        workloads.append(w)
    workloads.append({"id": "vr-ar", "type": "opaque", "demand": {"cluster": "gpu", "cores": 1, "freq_mhz": 800},
                      "power_mw": 2500, "arrival_ms": 600_000, "exit_ms": 1_800_000})
    workloads.append({"id": "bg", "type": "opaque", "demand": {"cluster": "little", "cores": 1, "freq_mhz": 600},
                      "power_mw": 300, "arrival_ms": 0})
    events = [{"at_ms": k * 300_000 + 1, "kind": "power_budget_change",
               "power_budget_mw": [10000, 5000, 7000][k % 3]} for k in range(12)]
    events += [{"at_ms": k * 450_000 + 7, "kind": "accuracy_requirement_change",
                "workload_id": f"net{k % n_dnn}", "acc_min": 70.0} for k in range(8)]
    return {"platform": "generic-npu-soc", "control_quantum_ms": 100, "horizon_ms": horizon_ms,
            "workloads": workloads, "events": events}
