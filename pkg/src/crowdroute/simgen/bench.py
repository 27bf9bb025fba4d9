"""Timed runs of every search variant over a workload, scored against simulator gold."""

from __future__ import annotations

import csv
import gc
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Callable, Sequence

from ..estimator import EstimatorKind
from ..model import IndoorCrowdModel, to_gtg
from ..router import QueryResult, QueryType, RoutingConfig, search, search_adaptive, search_gtg
from .metrics import Metrics, evaluate
from .space import QueryInstance

ALGORITHMS = ("exact-local", "exact-global", "pp", "nt", "gtg", "adaptive")
REPORT_COLUMNS = (
    "algorithm",
    "parameter",
    "value",
    "queryType",
    "instances",
    "repeats",
    "wallTimeMs",
    "peakLedgerEntries",
    "hitRate",
    "meanGamma",
    "medianGamma",
    "infiniteGamma",
)

Runner = Callable[[QueryInstance], QueryResult]


def make_runner(model: IndoorCrowdModel, algorithm: str, qt: QueryType | str, cfg: RoutingConfig) -> Runner:
    """A callable answering one instance with a fresh session."""
    qt = QueryType(qt)
    estimator = {
        "exact-local": EstimatorKind.LOCAL,
        "exact-global": EstimatorKind.GLOBAL,
        "pp": EstimatorKind.PP,
        "nt": EstimatorKind.NT,
        "gtg": EstimatorKind.LOCAL,
        "adaptive": EstimatorKind.LOCAL,
    }.get(algorithm)
    if estimator is None:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    run_cfg = RoutingConfig(cfg.speed, cfg.buffer_width, estimator, cfg.nt)
    if algorithm == "gtg":
        gtg = to_gtg(model)
        return lambda i: search_gtg(gtg, i.source, i.target, i.time, qt, run_cfg)
    if algorithm == "adaptive":
        return lambda i: search_adaptive(model, i.source, i.target, i.time, qt, run_cfg)
    return lambda i: search(model, i.source, i.target, i.time, qt, run_cfg)


@dataclass
class AlgorithmRun:
    algorithm: str
    results: list[QueryResult]
    # mean wall time per instance over the repeats, seconds
    wall_times: list[float] = field(default_factory=list)

    @property
    def mean_wall_time(self) -> float:
        return statistics.fmean(self.wall_times) if self.wall_times else 0.0

    @property
    def mean_memory(self) -> float:
        return statistics.fmean(r.memory_entries for r in self.results) if self.results else 0.0

    @property
    def peak_memory(self) -> int:
        return max((r.memory_entries for r in self.results), default=0)


def run_algorithms(
    model: IndoorCrowdModel,
    instances: Sequence[QueryInstance],
    algorithms: Sequence[str],
    qt: QueryType | str,
    cfg: RoutingConfig | None = None,
    repeats: int = 1,
) -> dict[str, AlgorithmRun]:
    """Answer every instance with every algorithm.

    Algorithms are interleaved per instance, with their order rotated, so that
    slow drift in machine load affects them alike.  The collector runs between
    timed queries rather than inside them.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    cfg = cfg or RoutingConfig()
    runners = {a: make_runner(model, a, qt, cfg) for a in algorithms}
    runs = {a: AlgorithmRun(a, []) for a in algorithms}
    order = list(algorithms)
    was_enabled = gc.isenabled()
    try:
        for k, inst in enumerate(instances):
            shift = k % len(order) if order else 0
            rotated = order[shift:] + order[:shift]
            times: dict[str, list[float]] = {a: [] for a in algorithms}
            last: dict[str, QueryResult] = {}
            for _ in range(repeats):
                for a in rotated:
                    gc.collect()
                    gc.disable()
                    started = time.perf_counter()
                    last[a] = runners[a](inst)
                    times[a].append(time.perf_counter() - started)
                    gc.enable()
            for a in algorithms:
                runs[a].results.append(last[a])
                runs[a].wall_times.append(statistics.fmean(times[a]))
    finally:
        if was_enabled:
            gc.enable()
    return runs


@dataclass
class ReportRow:
    algorithm: str
    parameter: str
    value: str
    query_type: str
    instances: int
    repeats: int
    wall_time_ms: float
    peak_ledger_entries: int
    metrics: Metrics | None

    def cells(self) -> list[object]:
        m = self.metrics
        return [
            self.algorithm,
            self.parameter,
            self.value,
            self.query_type,
            self.instances,
            self.repeats,
            self.wall_time_ms,
            self.peak_ledger_entries,
            "" if m is None else m.hit_rate,
            "" if m is None else m.mean_gamma,
            "" if m is None else m.median_gamma,
            "" if m is None else m.infinite,
        ]


def report_rows(
    runs: dict[str, AlgorithmRun],
    golds: Sequence[QueryResult] | None,
    qt: QueryType | str,
    parameter: str,
    value: str,
    repeats: int,
) -> tuple[list[ReportRow], dict[str, Metrics]]:
    qt = QueryType(qt)
    rows: list[ReportRow] = []
    per_algorithm: dict[str, Metrics] = {}
    for name in sorted(runs):
        run = runs[name]
        metrics = None
        if golds is not None:
            metrics = evaluate(run.results, golds, qt)
            for row, seconds in zip(metrics.rows, run.wall_times):
                row.wall_time_ms = seconds * 1000.0
            per_algorithm[name] = metrics
        rows.append(
            ReportRow(
                name,
                parameter,
                value,
                qt.value,
                len(run.results),
                repeats,
                run.mean_wall_time * 1000.0,
                run.peak_memory,
                metrics,
            )
        )
    return rows, per_algorithm


def write_report(rows: Sequence[ReportRow], path: str | FsPath) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(row.cells())
