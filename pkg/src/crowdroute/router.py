"""Crowd-aware segment costs and the fastest / least-crowded path searches."""

from __future__ import annotations

import heapq
import math
import time
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Protocol

import numpy as np

from .estimator import EstimatorKind, NtConfig, Session
from .flows import update_timestamps
from .model import (
    GeneralTimeDependentGraph,
    IndoorCrowdModel,
    IndoorPoint,
    ModelError,
    Partition,
    PartitionKind,
    Path,
)

SOURCE = -1
TARGET = -2


class QueryType(str, Enum):
    FPQ = "fpq"
    LCPQ = "lcpq"


class LivelockError(RuntimeError):
    pass


class PopulationSource(Protocol):
    def population_at(self, partition: int, t: float) -> float: ...


@dataclass(frozen=True)
class RoutingConfig:
    speed: float = 1.2
    buffer_width: float = 1.0
    estimator: EstimatorKind = EstimatorKind.LOCAL
    nt: NtConfig = field(default_factory=NtConfig)

    def __post_init__(self) -> None:
        if not self.speed > 0:
            raise ValueError("average speed must be positive")
        if not self.buffer_width > 0:
            raise ValueError("buffer width must be positive")

    def session(self, model: IndoorCrowdModel) -> Session:
        return Session(model, self.estimator, self.nt)


@dataclass(frozen=True)
class CostVector:
    distance: float = 0.0
    time: float = 0.0
    contact: float | None = None

    def __add__(self, other: CostVector) -> CostVector:
        if self.contact is None or other.contact is None:
            contact = other.contact if self.contact is None else self.contact
        else:
            contact = self.contact + other.contact
        return CostVector(self.distance + other.distance, self.time + other.time, contact)

    def key(self, qt: QueryType) -> tuple[float, float]:
        if qt is QueryType.FPQ:
            return (self.time, self.distance)
        return (self.contact or 0.0, self.distance)

    def primary(self, qt: QueryType) -> float:
        return self.time if qt is QueryType.FPQ else (self.contact or 0.0)

    def to_dict(self) -> dict[str, float]:
        out = {"distance": self.distance, "time": self.time}
        if self.contact is not None:
            out["contact"] = self.contact
        return out


def zero_cost(qt: QueryType) -> CostVector:
    return CostVector(0.0, 0.0, 0.0 if qt is QueryType.LCPQ else None)


# -- cost functions -----------------------------------------------------------


def lagging(kind: PartitionKind | str, density: float, max_density: float) -> float:
    """Slowdown coefficient; 2 for an empty partition, 1 + e at capacity."""
    ratio = density / max_density
    if PartitionKind(kind) is PartitionKind.QUEUE:
        return 1.0 + math.exp(ratio)
    return 1.0 + math.exp(ratio * ratio)


def contact_value(kind: PartitionKind | str, length: float, density: float, population: float, width: float = 1.0) -> float:
    if length == 0.0:
        return 0.0
    if PartitionKind(kind) is PartitionKind.QUEUE:
        return width / length * population
    return length * width * density


def segment_cost(
    part: Partition, length: float, population: float, qt: QueryType, cfg: RoutingConfig
) -> CostVector:
    density = population / part.area
    rho = lagging(part.kind, density, part.max_density)
    seconds = length / cfg.speed * rho
    if qt is QueryType.FPQ:
        return CostVector(length, seconds, None)
    return CostVector(length, seconds, contact_value(part.kind, length, density, population, cfg.buffer_width))


def _length(model: IndoorCrowdModel, a: int | IndoorPoint, b: int | IndoorPoint, v: int) -> float:
    meters = model.segment_length(a, b, v)
    if math.isinf(meters):
        raise ModelError("infinite door-to-door distance")
    return meters


def passing_time(
    session: PopulationSource | Session,
    a: int | IndoorPoint,
    b: int | IndoorPoint,
    v: int,
    t_c: float,
    cfg: RoutingConfig,
    model: IndoorCrowdModel | None = None,
) -> float:
    model = model or session.model  # type: ignore[union-attr]
    length = _length(model, a, b, v)
    return segment_cost(model.partitions[v], length, session.population_at(v, t_c), QueryType.FPQ, cfg).time


def passing_contact(
    session: PopulationSource | Session,
    a: int | IndoorPoint,
    b: int | IndoorPoint,
    v: int,
    t_c: float,
    cfg: RoutingConfig,
    model: IndoorCrowdModel | None = None,
) -> float:
    model = model or session.model  # type: ignore[union-attr]
    length = _length(model, a, b, v)
    cost = segment_cost(model.partitions[v], length, session.population_at(v, t_c), QueryType.LCPQ, cfg)
    return cost.contact or 0.0


# -- results ------------------------------------------------------------------


@dataclass
class QueryResult:
    path: Path | None
    totals: CostVector | None
    expanded_nodes: int = 0
    relaxations: int = 0
    derivation_calls: int = 0
    wall_time: float = 0.0
    memory_entries: int = 0

    @property
    def found(self) -> bool:
        return self.path is not None

    def to_dict(self) -> dict:
        out: dict = {
            "found": self.found,
            "expandedNodes": self.expanded_nodes,
            "relaxations": self.relaxations,
            "derivationCalls": self.derivation_calls,
            "wallTimeMs": self.wall_time * 1000.0,
            "ledgerEntries": self.memory_entries,
        }
        if self.path is not None and self.totals is not None:
            out["doors"] = list(self.path.doors)
            out["partitions"] = list(self.path.partitions)
            out["segments"] = [c.to_dict() for c in self.path.segment_costs]
            out["totals"] = self.totals.to_dict()
        return out


# -- label-setting search -------------------------------------------------------


@dataclass
class _Labels:
    cost: dict[int, CostVector] = field(default_factory=dict)
    prev: dict[int, int] = field(default_factory=dict)
    via: dict[int, int] = field(default_factory=dict)
    seg: dict[int, CostVector] = field(default_factory=dict)


@dataclass
class _Outcome:
    labels: _Labels
    found: bool
    expanded: int
    relaxations: int


def _run(
    model: IndoorCrowdModel,
    pops: PopulationSource,
    origin: int | IndoorPoint,
    origin_parts: Iterable[int],
    target: IndoorPoint,
    t_start: float,
    qt: QueryType,
    cfg: RoutingConfig,
) -> _Outcome:
    """Dijkstra over doors from ``origin`` (a point or a door just crossed)."""
    fpq = qt is QueryType.FPQ
    parts = model.partitions
    door_enters = model.door_enters
    start = SOURCE if isinstance(origin, IndoorPoint) else origin
    goal = target.partition
    labels = _Labels()
    labels.cost[start] = zero_cost(qt)
    heap: list[tuple[float, float, int]] = [(0.0, 0.0, start)]
    visited: set[int] = set()
    expanded = relaxations = 0
    cost_of, prev_of, via_of, seg_of = labels.cost, labels.prev, labels.via, labels.seg
    while heap:
        _, _, node = heapq.heappop(heap)
        if node in visited:
            continue
        visited.add(node)
        expanded += 1
        if node == TARGET:
            return _Outcome(labels, True, expanded, relaxations)
        here = cost_of[node]
        t_arr = t_start + here.time
        if node == start:
            entered: Iterable[int] = origin_parts
            at: int | IndoorPoint = origin
        else:
            came = via_of[node]
            entered = [v for v in door_enters[node] if v != came]
            at = node
        for v in entered:
            part = parts[v]
            population = pops.population_at(v, t_arr)
            density = population / part.area
            rho = lagging(part.kind, density, part.max_density)
            candidates: list[tuple[int, float]] = []
            if v == goal:
                candidates.append((TARGET, model.segment_length(at, target, v)))
            if isinstance(at, IndoorPoint):
                candidates.extend((dj, model.point_door_distance(at, dj)) for dj in part.leaveable)
            else:
                d2d = part.d2d
                candidates.extend((dj, d2d[(at, dj)]) for dj in part.leaveable if dj != at)
            for nxt, length in candidates:
                relaxations += 1
                if nxt in visited:
                    continue
                seconds = length / cfg.speed * rho
                if fpq:
                    seg = CostVector(length, seconds, None)
                else:
                    seg = CostVector(
                        length, seconds, contact_value(part.kind, length, density, population, cfg.buffer_width)
                    )
                new = here + seg
                old = cost_of.get(nxt)
                if old is not None and new.key(qt) >= old.key(qt):
                    continue
                cost_of[nxt] = new
                prev_of[nxt] = node
                via_of[nxt] = v
                seg_of[nxt] = seg
                primary = new.time if fpq else new.contact
                heapq.heappush(heap, (primary, new.distance, nxt))  # type: ignore[arg-type]
    return _Outcome(labels, False, expanded, relaxations)


class GtgWeights:
    """Time-dependent edge weights of a door graph.

    Each door-pair edge carries its weight over every unit time interval from
    the model's start time up to the latest time the search has asked about.
    The series of all edges through one partition are extended together,
    because they all change whenever that partition's population does.
    """

    def __init__(self, gtg: GeneralTimeDependentGraph, pops: PopulationSource, qt: QueryType, cfg: RoutingConfig) -> None:
        self.gtg = gtg
        self.pops = pops
        self.qt = qt
        self.cfg = cfg
        model = gtg.model
        n = model.n_partitions
        self._slot = [0] * len(gtg.edges)
        self._lengths: list[np.ndarray] = []
        for v in range(n):
            ids = gtg.by_partition[v]
            for j, ei in enumerate(ids):
                self._slot[ei] = j
            self._lengths.append(np.array([gtg.edges[ei].length for ei in ids], dtype=float))
        # per partition: interval start stamps, weights per stamp, and the horizon already scanned
        self._stamps: list[list[int]] = [[model.start_time] for _ in range(n)]
        self._times: list[list[np.ndarray]] = [[] for _ in range(n)]
        self._contacts: list[list[np.ndarray]] = [[] for _ in range(n)]
        self._horizon = [model.start_time - 1] * n
        self.entries = 0

    def _extend(self, v: int, t: int) -> None:
        model = self.gtg.model
        stamps = self._stamps[v]
        new = list(update_timestamps(model, v, self._horizon[v] + 1, t)) if t > self._horizon[v] else []
        if self._horizon[v] < model.start_time:
            new = [s for s in new if s > model.start_time]
            new.insert(0, model.start_time)
            stamps.clear()
        self._horizon[v] = max(self._horizon[v], t)
        if not new:
            return
        part = model.partitions[v]
        lengths = self._lengths[v]
        cfg = self.cfg
        base = lengths / cfg.speed
        zero = lengths == 0.0
        for stamp in new:
            population = self.pops.population_at(v, stamp)
            density = population / part.area
            rho = lagging(part.kind, density, part.max_density)
            self._times[v].append(base * rho)
            if self.qt is QueryType.LCPQ:
                if part.kind is PartitionKind.QUEUE:
                    with np.errstate(divide="ignore"):
                        contact = np.where(zero, 0.0, cfg.buffer_width / lengths * population)
                else:
                    contact = lengths * cfg.buffer_width * density
                self._contacts[v].append(contact)
            stamps.append(stamp)
            self.entries += len(lengths)

    def row(self, v: int, t: float) -> int:
        """Index of the interval covering ``t`` in v's weight series."""
        ti = int(math.floor(t))
        if ti > self._horizon[v]:
            self._extend(v, ti)
        return bisect_right(self._stamps[v], ti) - 1

    def weight(self, ei: int, row: int) -> CostVector:
        edge = self.gtg.edges[ei]
        j = self._slot[ei]
        seconds = float(self._times[edge.partition][row][j])
        if self.qt is QueryType.FPQ:
            return CostVector(edge.length, seconds, None)
        return CostVector(edge.length, seconds, float(self._contacts[edge.partition][row][j]))

    def __len__(self) -> int:
        return self.entries


def _run_gtg(
    gtg: GeneralTimeDependentGraph,
    weights: GtgWeights,
    ps: IndoorPoint,
    target: IndoorPoint,
    t_start: float,
    qt: QueryType,
    cfg: RoutingConfig,
) -> _Outcome:
    """Dijkstra over door vertices using materialised edge weights.

    Every edge leaving a popped door is examined.  Edges that turn back through
    the partition the door was reached from are skipped, so both searches rank
    the same set of paths.
    """
    model = gtg.model
    parts = model.partitions
    goal = target.partition
    labels = _Labels()
    labels.cost[SOURCE] = zero_cost(qt)
    heap: list[tuple[float, float, int]] = [(0.0, 0.0, SOURCE)]
    visited: set[int] = set()
    expanded = relaxations = 0
    cost_of, prev_of, via_of, seg_of = labels.cost, labels.prev, labels.via, labels.seg
    primary_of = (lambda c: c.time) if qt is QueryType.FPQ else (lambda c: c.contact)

    def relax(node: int, here: CostVector, nxt: int, v: int, seg: CostVector) -> None:
        new = here + seg
        old = cost_of.get(nxt)
        if old is not None and new.key(qt) >= old.key(qt):
            return
        cost_of[nxt] = new
        prev_of[nxt] = node
        via_of[nxt] = v
        seg_of[nxt] = seg
        heapq.heappush(heap, (primary_of(new), new.distance, nxt))

    while heap:
        _, _, node = heapq.heappop(heap)
        if node in visited:
            continue
        visited.add(node)
        expanded += 1
        if node == TARGET:
            return _Outcome(labels, True, expanded, relaxations)
        here = cost_of[node]
        t_arr = t_start + here.time
        if node == SOURCE:
            # edges of the virtual source vertex are built per query
            v = ps.partition
            population = weights.pops.population_at(v, t_arr)
            options = [(dj, model.point_door_distance(ps, dj)) for dj in parts[v].leaveable]
            if v == goal:
                options.append((TARGET, model.segment_length(ps, target, v)))
            for nxt, length in options:
                relaxations += 1
                relax(node, here, nxt, v, segment_cost(parts[v], length, population, qt, cfg))
            continue
        came = via_of[node]
        if goal != came and goal in model.door_enters[node] and TARGET not in visited:
            relaxations += 1
            population = weights.pops.population_at(goal, t_arr)
            seg = segment_cost(parts[goal], model.point_door_distance(target, node), population, qt, cfg)
            relax(node, here, TARGET, goal, seg)
        rows: dict[int, int] = {}
        for ei in gtg.adjacency[node]:
            edge = gtg.edges[ei]
            relaxations += 1
            if edge.target in visited or edge.partition == came:
                continue
            row = rows.get(edge.partition)
            if row is None:
                row = rows[edge.partition] = weights.row(edge.partition, t_arr)
            relax(node, here, edge.target, edge.partition, weights.weight(ei, row))
    return _Outcome(labels, False, expanded, relaxations)


def _extract(labels: _Labels, start: int, end: int = TARGET) -> tuple[list[int], list[int], list[CostVector]]:
    nodes, vias, segs = [], [], []
    node = end
    while node != start:
        nodes.append(node)
        vias.append(labels.via[node])
        segs.append(labels.seg[node])
        node = labels.prev[node]
    nodes.reverse()
    vias.reverse()
    segs.reverse()
    return nodes, vias, segs


def _check_endpoints(model: IndoorCrowdModel, ps: IndoorPoint, pt: IndoorPoint) -> None:
    for p in (ps, pt):
        model.point(p.partition, p.x, p.y)


def _finish(
    outcome: _Outcome,
    ps: IndoorPoint,
    pt: IndoorPoint,
    session: Session | None,
    started: float,
    calls_before: int,
) -> QueryResult:
    result = QueryResult(None, None, outcome.expanded, outcome.relaxations)
    if outcome.found:
        nodes, vias, segs = _extract(outcome.labels, SOURCE)
        result.path = Path(ps, tuple(nodes[:-1]), pt, tuple(vias), tuple(segs), outcome.labels.cost[TARGET])
        result.totals = outcome.labels.cost[TARGET]
    if session is not None:
        result.derivation_calls = session.derivation_calls - calls_before
        result.memory_entries = session.memory_entries
    result.wall_time = time.perf_counter() - started
    return result


def search(
    model: IndoorCrowdModel,
    ps: IndoorPoint,
    pt: IndoorPoint,
    t_q: float,
    qt: QueryType | str,
    cfg: RoutingConfig | None = None,
    session: PopulationSource | None = None,
) -> QueryResult:
    """Fastest (FPQ) or least-crowded (LCPQ) indoor path departing at ``t_q``."""
    started = time.perf_counter()
    cfg = cfg or RoutingConfig()
    qt = QueryType(qt)
    _check_endpoints(model, ps, pt)
    pops = session if session is not None else cfg.session(model)
    calls = getattr(pops, "derivation_calls", 0)
    outcome = _run(model, pops, ps, (ps.partition,), pt, t_q, qt, cfg)
    return _finish(outcome, ps, pt, pops if isinstance(pops, Session) else None, started, calls)


def search_gtg(
    gtg: GeneralTimeDependentGraph,
    ps: IndoorPoint,
    pt: IndoorPoint,
    t_q: float,
    qt: QueryType | str,
    cfg: RoutingConfig | None = None,
    session: PopulationSource | None = None,
) -> QueryResult:
    """The same query over the door graph, without the previous-partition pruning."""
    started = time.perf_counter()
    cfg = cfg or RoutingConfig()
    qt = QueryType(qt)
    model = gtg.model
    _check_endpoints(model, ps, pt)
    pops = session if session is not None else cfg.session(model)
    calls = getattr(pops, "derivation_calls", 0)
    weights = GtgWeights(gtg, pops, qt, cfg)
    outcome = _run_gtg(gtg, weights, ps, pt, t_q, qt, cfg)
    result = _finish(outcome, ps, pt, pops if isinstance(pops, Session) else None, started, calls)
    result.memory_entries += len(weights)
    return result


def search_adaptive(
    model: IndoorCrowdModel,
    ps: IndoorPoint,
    pt: IndoorPoint,
    t_q: float,
    qt: QueryType | str,
    cfg: RoutingConfig | None = None,
    session: PopulationSource | None = None,
) -> QueryResult:
    """Replan at every door reached and follow only the first hop of each plan."""
    started = time.perf_counter()
    cfg = cfg or RoutingConfig()
    qt = QueryType(qt)
    _check_endpoints(model, ps, pt)
    pops = session if session is not None else cfg.session(model)
    calls = getattr(pops, "derivation_calls", 0)
    origin: int | IndoorPoint = ps
    entered: tuple[int, ...] = (ps.partition,)
    total = zero_cost(qt)
    doors: list[int] = []
    vias: list[int] = []
    segs: list[CostVector] = []
    expanded = relaxations = 0
    limit = 10 * len(model.doors)
    for _ in range(limit + 1):
        start = SOURCE if isinstance(origin, IndoorPoint) else origin
        outcome = _run(model, pops, origin, entered, pt, t_q + total.time, qt, cfg)
        expanded += outcome.expanded
        relaxations += outcome.relaxations
        if not outcome.found:
            result = QueryResult(None, None, expanded, relaxations)
            break
        nodes, hop_vias, hop_segs = _extract(outcome.labels, start)
        total = total + hop_segs[0]
        segs.append(hop_segs[0])
        vias.append(hop_vias[0])
        if nodes[0] == TARGET:
            path = Path(ps, tuple(doors), pt, tuple(vias), tuple(segs), total)
            result = QueryResult(path, total, expanded, relaxations)
            break
        door = nodes[0]
        doors.append(door)
        origin = door
        entered = tuple(v for v in model.door_enters[door] if v != hop_vias[0])
    else:
        raise LivelockError(f"no arrival after {limit} replanning steps")
    if isinstance(pops, Session):
        result.derivation_calls = pops.derivation_calls - calls
        result.memory_entries = pops.memory_entries
    result.wall_time = time.perf_counter() - started
    return result


def replay_path(
    model: IndoorCrowdModel,
    pops: PopulationSource,
    path: Path,
    t_q: float,
    qt: QueryType | str,
    cfg: RoutingConfig | None = None,
) -> tuple[list[CostVector], CostVector]:
    """Recompute segment costs along ``path`` with on-the-fly arrival times."""
    cfg = cfg or RoutingConfig()
    qt = QueryType(qt)
    total = zero_cost(qt)
    segs: list[CostVector] = []
    for s in path.segments():
        length = model.segment_length(s.start, s.end, s.partition)
        population = pops.population_at(s.partition, t_q + total.time)
        seg = segment_cost(model.partitions[s.partition], length, population, qt, cfg)
        segs.append(seg)
        total = total + seg
    return segs, total


def distance_dijkstra(
    model: IndoorCrowdModel, ps: IndoorPoint, pt: IndoorPoint, max_dist: float = math.inf
) -> tuple[float, tuple[int, ...]] | None:
    """Plain shortest indoor distance with the same crossing rules; ``None`` if unreachable."""
    dist: dict[int, float] = {SOURCE: 0.0}
    prev: dict[int, int] = {}
    via: dict[int, int] = {}
    heap: list[tuple[float, int]] = [(0.0, SOURCE)]
    done: set[int] = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == TARGET:
            doors = []
            while prev.get(node, SOURCE) != SOURCE:
                node = prev[node]
                doors.append(node)
            return d, tuple(reversed(doors))
        if d > max_dist:
            break
        if node == SOURCE:
            entered: Iterable[int] = (ps.partition,)
            at: int | IndoorPoint = ps
        else:
            entered = [v for v in model.door_enters[node] if v != via[node]]
            at = node
        for v in entered:
            part = model.partitions[v]
            options = [(dj, model.segment_length(at, dj, v)) for dj in part.leaveable if dj != at]
            if v == pt.partition:
                options.append((TARGET, model.segment_length(at, pt, v)))
            for nxt, length in options:
                if nxt in done:
                    continue
                nd = d + length
                if nd < dist.get(nxt, math.inf):
                    dist[nxt] = nd
                    prev[nxt] = node
                    via[nxt] = v
                    heapq.heappush(heap, (nd, nxt))
    return None
