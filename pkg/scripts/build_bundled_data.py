#!/usr/bin/env python
"""Regenerate the constructed operating-point tables shipped with edge_rtm.

casestudy.csv  a 4-level width-scalable DNN on the Odroid XU3 (A15: 17
               frequencies, A7: 12). Per-cluster power follows
               P(f) = a + c * (f / f_max) ** g fitted through three of the
               measured single-DNN rows for that cluster; execution time is
               inversely proportional to frequency. Level factors scale
               time and power.
fig2_dnns.csv  two DNNs on generic-npu-soc used by scenarios/fig2.json.

Energies are power * time, rounded to 3 decimals. The output is
deterministic; run from the repository root.
"""

import csv
import math
import sys
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "edge_rtm" / "data"
COLUMNS = ["workload_id", "platform", "cluster", "cores", "freq_mhz", "config_pct",
           "time_ms", "power_mw", "energy_mj", "top1_acc"]


def fit_power(samples):
    """Fit a + c * (f / f_max) ** g through three (MHz, mW) samples."""
    (f0, p0), (f1, p1), (f2, p2) = samples
    a = 0.9 * p0
    for _ in range(200):
        g = math.log((p1 - a) / (p2 - a)) / math.log(f1 / f2)
        a = p0 - (p2 - a) * (f0 / f2) ** g
    return lambda f: a + (p2 - a) * (f / f2) ** g


def row(wid, platform, cluster, cores, freq, pct, t, p, acc):
    t = round(t, 1)
    p = round(p, 1)
    return {
        "workload_id": wid, "platform": platform, "cluster": cluster, "cores": cores,
        "freq_mhz": freq, "config_pct": pct, "time_ms": fmt(t), "power_mw": fmt(p),
        "energy_mj": fmt(round(p * t / 1000, 3)), "top1_acc": fmt(acc),
    }


def fmt(x):
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def casestudy():
    time_factor = {25: 0.40, 50: 0.62, 75: 0.90, 100: 1.00}
    power_factor = {25: 0.78, 50: 0.85, 75: 0.93, 100: 1.00}
    accuracy = {25: 80.2, 50: 86.5, 75: 89.1, 100: 90.3}
    clusters = {
        # work constant (ms * MHz at 100%), power samples, ladder
        "a15": (204_000, [(200, 326), (1000, 846), (1800, 2120)], range(200, 1801, 100)),
        "a7": (352_800, [(200, 72.4), (700, 141), (1300, 329)], range(200, 1301, 100)),
    }
    rows = []
    for cluster, (work, samples, ladder) in clusters.items():
        power = fit_power(samples)
        for f in ladder:
            for pct in (25, 50, 75, 100):
                rows.append(row("casestudy-dnn", "odroid-xu3", cluster, 4, f, pct,
                                time_factor[pct] * work / f, power_factor[pct] * power(f), accuracy[pct]))
    return rows


def fig2():
    level_t = {25: 0.40, 50: 0.60, 75: 0.75, 100: 1.00}
    level_p = {25: 0.80, 50: 0.87, 75: 0.94, 100: 1.00}
    dnns = {
        "dnn1": {
            "acc": {25: 71.0, 50: 80.5, 75: 85.2, 100: 88.0},
            # NPU rows are explicit: levels up to 50% fit in one capacity unit
            "npu": {25: (1, 7, 420), 50: (1, 11, 500), 75: (2, 16, 800), 100: (2, 20, 900)},
            # cluster -> cores -> (ms at 100% and top frequency, {MHz: mW})
            "cpu": {
                ("gpu", 1): (120, {400: 1000, 800: 1800}),
                ("big", 4): (110, {800: 1700, 1400: 2400, 2000: 3500}),
                ("big", 1): (225, {800: 500, 1400: 750, 2000: 1100}),
                ("little", 4): (280, {600: 500, 1200: 800, 1800: 1200}),
                ("little", 1): (700, {600: 200, 1200: 300, 1800: 450}),
            },
        },
        "dnn2": {
            "acc": {25: 62.3, 50: 70.1, 75: 74.8, 100: 76.9},
            "npu": {25: (1, 5, 380), 50: (1, 9, 450), 75: (2, 13, 850), 100: (2, 16, 950)},
            "cpu": {
                ("gpu", 1): (60, {400: 1000, 800: 1800}),
                ("big", 4): (80, {800: 1700, 1400: 2400, 2000: 3500}),
                ("big", 1): (300, {800: 500, 1400: 750, 2000: 1100}),
                ("little", 4): (200, {600: 500, 1200: 800, 1800: 1200}),
            },
        },
    }
    rows = []
    for wid, d in dnns.items():
        for pct, (units, t, p) in d["npu"].items():
            rows.append(row(wid, "generic-npu-soc", "npu", units, 1000, pct, t, p, d["acc"][pct]))
        for (cluster, cores), (t_top, powers) in d["cpu"].items():
            f_top = max(powers)
            for f, p in powers.items():
                for pct in (25, 50, 75, 100):
                    rows.append(row(wid, "generic-npu-soc", cluster, cores, f, pct,
                                    level_t[pct] * t_top * f_top / f, level_p[pct] * p, d["acc"][pct]))
    return rows


def write(name, rows):
    with open(OUT / name, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {OUT / name} ({len(rows)} rows)", file=sys.stderr)


if __name__ == "__main__":
    write("casestudy.csv", casestudy())
    write("fig2_dnns.csv", fig2())
