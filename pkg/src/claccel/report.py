"""Per-pass cycle accounting and report emission."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from collections import defaultdict

CSV_COLUMNS = ("task", "epoch", "sample", "layer", "pass", "cycles",
               "stalls", "saturations")


@dataclass
class PassRecord:
    task: int
    epoch: int
    sample: int
    layer: str
    pass_name: str
    cycles: int
    stalls: int
    saturations: int


class CycleReport:
    """Append-only log of every counted datapath pass."""

    def __init__(self, clock_period_ns: float = 3.87):
        self.clock_period_ns = clock_period_ns
        self.records: list[PassRecord] = []

    def add(self, task: int, epoch: int, sample: int, layer: str,
            pass_name: str, cycles: int, stalls: int, saturations: int) -> None:
        self.records.append(PassRecord(task, epoch, sample, layer, pass_name,
                                       cycles, stalls, saturations))

    @property
    def total_cycles(self) -> int:
        """Compute cycles plus stall cycles."""
        return sum(r.cycles + r.stalls for r in self.records)

    @property
    def total_stalls(self) -> int:
        return sum(r.stalls for r in self.records)

    @property
    def total_saturations(self) -> int:
        return sum(r.saturations for r in self.records)

    def wall_time_s(self) -> float:
        """Estimated wall time: cycles x clock period. A model-derived
        estimate, not a measured latency."""
        return self.total_cycles * self.clock_period_ns * 1e-9

    def per_pass_totals(self) -> list[dict]:
        agg = defaultdict(lambda: {"cycles": 0, "stalls": 0,
                                   "saturations": 0, "count": 0})
        for r in self.records:
            a = agg[(r.layer, r.pass_name)]
            a["cycles"] += r.cycles
            a["stalls"] += r.stalls
            a["saturations"] += r.saturations
            a["count"] += 1
        return [{"layer": layer, "pass": pname, **vals}
                for (layer, pname), vals in sorted(agg.items())]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in self.records:
                writer.writerow((r.task, r.epoch, r.sample, r.layer,
                                 r.pass_name, r.cycles, r.stalls,
                                 r.saturations))
