"""Hit rate and relative error of estimated answers against gold answers."""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Sequence

from ..router import QueryResult, QueryType

METRIC_COLUMNS = ("instance", "hit", "gamma", "wallTimeMs", "peakLedgerEntries")


def relative_error(estimate: float, gold: float) -> float:
    if gold == 0:
        return 0.0 if estimate == 0 else math.inf
    return abs(estimate - gold) / gold


@dataclass
class InstanceMetric:
    instance: int
    hit: bool
    gamma: float
    wall_time_ms: float = 0.0
    peak_ledger_entries: int = 0


@dataclass
class Metrics:
    rows: list[InstanceMetric] = field(default_factory=list)

    @property
    def hit_rate(self) -> float:
        return sum(r.hit for r in self.rows) / len(self.rows) if self.rows else 0.0

    @property
    def infinite(self) -> int:
        """Instances whose gold cost is 0 while the estimate is not."""
        return sum(math.isinf(r.gamma) for r in self.rows)

    def _finite(self) -> list[float]:
        return [r.gamma for r in self.rows if not math.isinf(r.gamma)]

    @property
    def mean_gamma(self) -> float:
        vals = self._finite()
        return statistics.fmean(vals) if vals else 0.0

    @property
    def median_gamma(self) -> float:
        vals = self._finite()
        return statistics.median(vals) if vals else 0.0

    def write_csv(self, path: str | FsPath) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRIC_COLUMNS)
            for r in self.rows:
                writer.writerow([r.instance, int(r.hit), r.gamma, r.wall_time_ms, r.peak_ledger_entries])


def evaluate(results: Sequence[QueryResult], golds: Sequence[QueryResult], qt: QueryType | str) -> Metrics:
    """Pair results with golds by position: path equality and relative cost error."""
    if len(results) != len(golds):
        raise ValueError("results and golds must be paired by instance")
    qt = QueryType(qt)
    metrics = Metrics()
    for i, (res, gold) in enumerate(zip(results, golds)):
        if res.path is None or gold.path is None or res.totals is None or gold.totals is None:
            hit = res.path is None and gold.path is None
            gamma = 0.0 if hit else math.inf
        else:
            hit = res.path.doors == gold.path.doors
            gamma = relative_error(res.totals.primary(qt), gold.totals.primary(qt))
        metrics.rows.append(InstanceMetric(i, hit, gamma, res.wall_time * 1000.0, res.memory_entries))
    return metrics
