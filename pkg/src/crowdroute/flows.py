"""Door report schedules, Poisson door flows and trajectory ingestion."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Iterable, Sequence

from .model import Edge, IndoorCrowdModel, IndoorPoint, ModelError

DEFAULT_FIT_WINDOW = 50
DEFAULT_SAMPLE_PERIOD = 10
MAX_SUBPATH_DOORS = 6


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class ReportSchedule:
    door: int
    period: int
    origin: int = 0

    def __post_init__(self) -> None:
        if self.period <= 0:
            raise ValueError("report period must be positive")

    def contains(self, t: int) -> bool:
        return t >= self.origin and (t - self.origin) % self.period == 0

    def between(self, ta: int, tb: int) -> range:
        """Report timestamps in the closed window [ta, tb]."""
        first = max(0, -((self.origin - ta) // self.period))
        return range(self.origin + first * self.period, tb + 1, self.period)


def schedule_of(model: IndoorCrowdModel, door: int) -> ReportSchedule:
    d = model.doors[door]
    return ReportSchedule(d.id, d.report_period, d.report_origin)


def partition_doors(model: IndoorCrowdModel, v: int) -> tuple[int, ...]:
    if not 0 <= v < model.n_partitions:
        raise ModelError(f"unknown partition {v}")
    return model.partitions[v].doors


def update_timestamps(model: IndoorCrowdModel, v: int, ta: int, tb: int) -> tuple[int, ...]:
    """Sorted union of the report timestamps of v's doors within [ta, tb]."""
    if ta > tb:
        raise ValueError("window start after window end")
    stamps: set[int] = set()
    for d in partition_doors(model, v):
        stamps.update(schedule_of(model, d).between(ta, tb))
    return tuple(sorted(stamps))


def global_update_timestamps(model: IndoorCrowdModel, ta: int, tb: int) -> tuple[int, ...]:
    stamps: set[int] = set()
    for d in range(len(model.doors)):
        stamps.update(schedule_of(model, d).between(ta, tb))
    return tuple(sorted(stamps))


@dataclass
class FlowHistory:
    edge: tuple[int, int, int]
    samples: list[tuple[int, float]] = field(default_factory=list)

    def flows(self) -> list[float]:
        return [f for _, f in self.samples]


def fit_lambda(history: FlowHistory | Sequence[float], window: int = DEFAULT_FIT_WINDOW) -> float:
    """Poisson maximum-likelihood rate: mean of the latest ``window`` flows."""
    flows = history.flows() if isinstance(history, FlowHistory) else list(history)
    if window <= 0:
        raise ValueError("window must be positive")
    recent = flows[-window:]
    if not recent:
        raise InsufficientDataError("insufficient data: empty flow history")
    return math.fsum(recent) / len(recent)


def expected_flow(model: IndoorCrowdModel, edge: Edge | int, t: int) -> float:
    e = model.edges[edge] if isinstance(edge, int) else edge
    return e.lam if model.doors[e.door].reports_at(t) else 0.0


# -- trajectories ------------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryPoint:
    timestamp: float
    point: IndoorPoint


@dataclass
class Trajectory:
    object_id: str
    points: list[TrajectoryPoint]

    def __post_init__(self) -> None:
        for a, b in zip(self.points, self.points[1:]):
            if b.timestamp <= a.timestamp:
                raise ValueError(f"trajectory {self.object_id}: timestamps must increase")


@dataclass
class IngestReport:
    hops: int = 0
    certain_hops: int = 0
    uncertain_hops: int = 0
    unmatched_hops: int = 0
    skipped_records: int = 0


@dataclass(frozen=True)
class SubPath:
    doors: tuple[int, ...]
    partitions: tuple[int, ...]  # the partitions entered through each door
    length: float
    # distance from the hop start to each door
    offsets: tuple[float, ...]


def enumerate_subpaths(
    model: IndoorCrowdModel,
    start: IndoorPoint,
    end: IndoorPoint,
    max_doors: int = MAX_SUBPATH_DOORS,
) -> list[SubPath]:
    """Loop-free door sequences leading from ``start``'s partition to ``end``'s."""
    found: list[SubPath] = []
    goal = end.partition

    def walk(v: int, node: int | IndoorPoint, doors: list[int], parts: list[int], offsets: list[float], dist: float) -> None:
        if len(doors) >= max_doors:
            return
        for ei in model.out_edges[v]:
            e = model.edges[ei]
            if e.target in parts or e.target == start.partition or e.door in doors:
                continue
            step = model.segment_length(node, e.door, v)
            reach = dist + step
            doors.append(e.door)
            parts.append(e.target)
            offsets.append(reach)
            if e.target == goal:
                total = reach + model.point_door_distance(end, e.door)
                found.append(SubPath(tuple(doors), tuple(parts), total, tuple(offsets)))
            else:
                walk(e.target, e.door, doors, parts, offsets, reach)
            doors.pop()
            parts.pop()
            offsets.pop()

    walk(start.partition, start, [], [], [], 0.0)
    return found


def subpath_probabilities(lengths: Sequence[float]) -> list[float]:
    """Inverse-length weights normalised to one."""
    weights = [1.0 / max(length, 1e-12) for length in lengths]
    total = math.fsum(weights)
    return [w / total for w in weights]


def hop_credits(
    model: IndoorCrowdModel,
    a: TrajectoryPoint,
    b: TrajectoryPoint,
    max_doors: int = MAX_SUBPATH_DOORS,
) -> list[tuple[int, float, float]]:
    """Door credits ``(edge index, time, probability)`` for one trajectory hop."""
    u, w = a.point.partition, b.point.partition
    if u == w:
        return []
    direct = [model.edges[i] for i in model.out_edges[u] if model.edges[i].target == w]
    if direct:
        candidates = [
            SubPath(
                (e.door,),
                (w,),
                model.point_door_distance(a.point, e.door) + model.point_door_distance(b.point, e.door),
                (model.point_door_distance(a.point, e.door),),
            )
            for e in direct
        ]
    else:
        candidates = enumerate_subpaths(model, a.point, b.point, max_doors)
        if not candidates:
            return []
        shortest = min(c.length for c in candidates)
        candidates = [c for c in candidates if c.length <= 2.0 * shortest]
    probs = subpath_probabilities([c.length for c in candidates])
    span = b.timestamp - a.timestamp
    credits: list[tuple[int, float, float]] = []
    for sub, prob in zip(candidates, probs):
        prev = u
        for door, entered, offset in zip(sub.doors, sub.partitions, sub.offsets):
            # crossing time interpolated by the distance covered so far
            when = a.timestamp + span * (offset / sub.length if sub.length > 0 else 0.5)
            credits.append((model.edge_index[(prev, entered, door)], when, prob))
            prev = entered
    return credits


def ingest_trajectories(
    model: IndoorCrowdModel,
    trajectories: Iterable[Trajectory],
    sample_period: int = DEFAULT_SAMPLE_PERIOD,
    max_doors: int = MAX_SUBPATH_DOORS,
) -> tuple[dict[tuple[int, int, int], FlowHistory], IngestReport]:
    """Turn trajectories into per-edge flow samples, one per ``sample_period`` bucket."""
    if sample_period <= 0:
        raise ValueError("sample period must be positive")
    report = IngestReport()
    buckets: dict[int, dict[int, float]] = defaultdict(lambda: defaultdict(float))
    t_min, t_max = math.inf, -math.inf
    for traj in trajectories:
        pts = traj.points
        if pts:
            t_min = min(t_min, pts[0].timestamp)
            t_max = max(t_max, pts[-1].timestamp)
        for a, b in zip(pts, pts[1:]):
            if a.point.partition == b.point.partition:
                continue
            report.hops += 1
            credits = hop_credits(model, a, b, max_doors)
            if not credits:
                report.unmatched_hops += 1
                continue
            if len({c[2] for c in credits}) == 1 and credits[0][2] == 1.0:
                report.certain_hops += 1
            else:
                report.uncertain_hops += 1
            for edge, when, prob in credits:
                buckets[edge][int(math.floor(when / sample_period)) * sample_period] += prob
    histories: dict[tuple[int, int, int], FlowHistory] = {}
    if t_min == math.inf:
        return histories, report
    first = int(math.floor(t_min / sample_period)) * sample_period
    last = int(math.floor(t_max / sample_period)) * sample_period
    for edge in sorted(buckets):
        e = model.edges[edge]
        counts = buckets[edge]
        samples = [(t, counts.get(t, 0.0)) for t in range(first, last + 1, sample_period)]
        histories[(e.source, e.target, e.door)] = FlowHistory((e.source, e.target, e.door), samples)
    return histories, report


# -- CSV io ------------------------------------------------------------------

TRAJECTORY_COLUMNS = ("objectId", "timestamp", "partitionId", "x", "y")
FLOW_COLUMNS = ("fromPartition", "toPartition", "door", "timestamp", "flow")


def read_trajectories_csv(
    model: IndoorCrowdModel, path: str | FsPath, report: IngestReport | None = None
) -> list[Trajectory]:
    """Read trajectories; records outside every partition are skipped and counted."""
    report = report if report is not None else IngestReport()
    rows: dict[str, list[TrajectoryPoint]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            try:
                pt = model.point(int(row["partitionId"]), float(row["x"]), float(row["y"]))
            except (ModelError, ValueError, KeyError):
                report.skipped_records += 1
                continue
            rows[row["objectId"]].append(TrajectoryPoint(float(row["timestamp"]), pt))
    result = []
    for oid, pts in rows.items():
        pts.sort(key=lambda p: p.timestamp)
        dedup = [p for i, p in enumerate(pts) if i == 0 or p.timestamp > pts[i - 1].timestamp]
        report.skipped_records += len(pts) - len(dedup)
        result.append(Trajectory(oid, dedup))
    return result


def write_trajectories_csv(trajectories: Iterable[Trajectory], path: str | FsPath) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for traj in trajectories:
            for p in traj.points:
                writer.writerow([traj.object_id, p.timestamp, p.point.partition, p.point.x, p.point.y])


def read_flow_history_csv(path: str | FsPath) -> dict[tuple[int, int, int], FlowHistory]:
    histories: dict[tuple[int, int, int], FlowHistory] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["fromPartition"]), int(row["toPartition"]), int(row["door"]))
            hist = histories.setdefault(key, FlowHistory(key))
            hist.samples.append((int(float(row["timestamp"])), float(row["flow"])))
    for hist in histories.values():
        hist.samples.sort()
    return histories


def write_flow_history_csv(histories: Iterable[FlowHistory], path: str | FsPath) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FLOW_COLUMNS)
        for hist in histories:
            for t, flow in hist.samples:
                writer.writerow([*hist.edge, t, flow])
