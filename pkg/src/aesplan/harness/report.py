"""Cycle metrics and report files."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from aesplan.errors import EmptyInput

PHASE_KEYS = ("Scoop", "SwingToTruck", "Dump", "SwingBack")
PHASE_LABELS = ("scoop", "swing_to_truck", "dump", "swing_back")

# published per-phase means (s), printed total and fill rate (%)
REFERENCE_ROWS = {
    "AES (reference)": {"scoop": 5.5, "swing_to_truck": 8.5, "dump": 5.4, "swing_back": 5.7, "total": 25.0,
                        "fill_rate": 105.0},
    "Human (reference)": {"scoop": 5.8, "swing_to_truck": 6.2, "dump": 5.8, "swing_back": 5.7, "total": 23.6,
                          "fill_rate": 86.0},
}
REFERENCE_OPS_PER_HOUR = Fraction(145)
REFERENCE_VOLUME_PER_HOUR = Fraction("36.25")
REFERENCE_HPI_HOURS = Fraction(24)


def reference_identities():
    """Exact checks on the published throughput and HPI figures."""
    per_op = REFERENCE_VOLUME_PER_HOUR / REFERENCE_OPS_PER_HOUR
    hpi = hours_per_intervention(REFERENCE_HPI_HOURS, 1)
    return {
        "volume_per_op": per_op,
        "volume_per_op_ok": per_op == Fraction(1, 4),
        "hpi": hpi,
        "hpi_ok": hpi == 24,
    }


def hours_per_intervention(hours, interventions):
    if interventions == 0:
        return math.inf
    if isinstance(hours, Fraction):
        return hours / interventions
    return float(hours) / interventions


@dataclass
class CycleMetrics:
    cycles: list
    hours: float
    interventions: int
    delivered: float
    capacity: float
    scoop: float = 0.0
    swing_to_truck: float = 0.0
    dump: float = 0.0
    swing_back: float = 0.0
    total: float = 0.0
    fill_rate: float = 0.0
    max_fill_rate: float = 0.0
    ops_per_hour: float = 0.0
    volume_per_hour: float = 0.0
    mean_load: float = 0.0
    hpi: float = math.inf
    identity_error: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def n_cycles(self):
        return len(self.cycles)

    def summary(self):
        d = asdict(self)
        d.pop("cycles")
        d["n_cycles"] = self.n_cycles
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None if math.isnan(v) else "inf"
        return d


def compute_metrics(cycles, hours, interventions, capacity, extra=None) -> CycleMetrics:
    """Aggregate per-cycle records (phase ticks, loads) into phase-table figures.

    Each record holds phase durations in seconds, ``fill`` (percent) and
    ``delivered`` (m3 that reached the truck in that cycle).
    """
    m = CycleMetrics(list(cycles), float(hours), int(interventions), 0.0, float(capacity), extra=extra or {})
    m.hpi = hours_per_intervention(hours, interventions)
    if not cycles:
        return m
    for key, label in zip(PHASE_KEYS, PHASE_LABELS):
        setattr(m, label, float(np.mean([c[key] for c in cycles])))
    m.total = float(np.mean([sum(c[k] for k in PHASE_KEYS) for c in cycles]))
    fills = [c["fill"] for c in cycles]
    m.fill_rate = float(np.mean(fills))
    m.max_fill_rate = float(np.max(fills))
    m.delivered = float(sum(c["delivered"] for c in cycles))
    m.mean_load = m.delivered / len(cycles)
    if hours > 0:
        m.ops_per_hour = len(cycles) / hours
        m.volume_per_hour = m.delivered / hours
        m.identity_error = abs(m.ops_per_hour * m.mean_load - m.volume_per_hour)
    return m


def format_table(m: CycleMetrics, name="simulated"):
    cols = ("scoop", "swing_to_truck", "dump", "swing_back", "total", "fill_rate")
    head = f"{'row':<20}" + "".join(f"{c:>16}" for c in cols)
    lines = [head, "-" * len(head)]
    ours = {c: getattr(m, c) for c in cols}
    for label, row in [(name, ours)] + list(REFERENCE_ROWS.items()):
        lines.append(f"{label:<20}" + "".join(f"{row[c]:>16.2f}" for c in cols))
    lines.append("")
    lines.append(f"cycles              {m.n_cycles}")
    lines.append(f"simulated hours     {m.hours:.4f}")
    lines.append(f"ops per hour        {m.ops_per_hour:.3f}")
    lines.append(f"volume per hour     {m.volume_per_hour:.4f} m3/h")
    lines.append(f"mean load per op    {m.mean_load:.5f} m3")
    lines.append(f"identity residual   {m.identity_error:.3e}  (ops/h x mean load - volume/h)")
    lines.append(f"interventions       {m.interventions}")
    lines.append(f"HPI                 {m.hpi if math.isfinite(m.hpi) else 'inf'}")
    ident = reference_identities()
    lines.append(f"reference identity  36.25 / 145 = {ident['volume_per_op']} m3/op "
                 f"({'ok' if ident['volume_per_op_ok'] else 'MISMATCH'})")
    lines.append(f"reference HPI       24 h / 1 intervention = {ident['hpi']} "
                 f"({'ok' if ident['hpi_ok'] else 'MISMATCH'})")
    return "\n".join(lines) + "\n"


def report(m: CycleMetrics, out_dir, name="simulated"):
    """Write report.json, report.txt and cycles.csv under ``out_dir``; returns the paths."""
    if m.n_cycles < 1:
        raise EmptyInput("report needs at least one completed cycle")
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f) for k, f in
             (("json", "report.json"), ("text", "report.txt"), ("csv", "cycles.csv"))}
    ident = reference_identities()
    doc = {"name": name, "metrics": m.summary(), "reference": REFERENCE_ROWS,
           "reference_identities": {"volume_per_op": str(ident["volume_per_op"]), "volume_per_op_ok": ident["volume_per_op_ok"],
                                "hpi": str(ident["hpi"]), "hpi_ok": ident["hpi_ok"]}}
    with open(paths["json"], "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(paths["text"], "w") as fh:
        fh.write(format_table(m, name))
    with open(paths["csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle", "t_end"] + list(PHASE_LABELS) + ["total", "fill_rate", "delivered", "cum_delivered"])
        cum = 0.0
        for i, c in enumerate(m.cycles, 1):
            cum += c["delivered"]
            phases = [c[k] for k in PHASE_KEYS]
            w.writerow([i, f"{c['t_end']:.1f}"] + [f"{p:.1f}" for p in phases]
                       + [f"{sum(phases):.1f}", f"{c['fill']:.4f}", f"{c['delivered']:.9f}", f"{cum:.9f}"])
    return paths
