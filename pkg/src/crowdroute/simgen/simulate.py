"""Object-level crowd simulation used as the gold-standard oracle."""

from __future__ import annotations

import math
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..flows import Trajectory, TrajectoryPoint
from ..model import IndoorCrowdModel, IndoorPoint, PartitionKind
from ..router import QueryResult, QueryType, RoutingConfig, lagging, search
from .space import QueryInstance, random_point


class SimulationHorizonError(RuntimeError):
    pass


@dataclass
class SimObject:
    id: int
    partition: int
    entered_at: float
    entry_door: int | None
    # seconds needed inside the current partition, per exit door, fixed on entry
    rho: float = 2.0
    log: list[tuple[int, float, float | None]] = field(default_factory=list)


@dataclass
class SimState:
    model: IndoorCrowdModel
    start: int
    horizon: int
    seed: int
    speed: float
    objects: list[SimObject]
    # per partition: timestamps where the count changed and the counts from then on
    count_times: list[list[int]]
    count_values: list[list[int]]
    # per edge: {report timestamp: number of objects that crossed}
    flows: list[dict[int, int]]
    # per Q partition: object ids in join order and in leave order
    joins: dict[int, list[int]]
    leaves: dict[int, list[int]]
    trajectories: list[Trajectory]
    report_times: list[int]
    blocked_exits: int = 0

    def population_at(self, v: int, t: float) -> float:
        if t > self.horizon:
            raise SimulationHorizonError(f"simulation horizon {self.horizon} is shorter than query time {t}")
        times = self.count_times[v]
        return float(self.count_values[v][bisect_right(times, t) - 1])

    def total_objects(self, t: float) -> int:
        return sum(int(self.population_at(v, t)) for v in range(self.model.n_partitions))

    def fifo_violations(self) -> list[int]:
        """Q partitions whose leave order is not the matching prefix of their join order."""
        bad = []
        for v, left in self.leaves.items():
            joined = self.joins[v]
            if joined[: len(left)] != left:
                bad.append(v)
        return bad

    def edge_flow_series(self, edge: int) -> list[int]:
        """Crossings per report of ``edge``'s door over the simulated span, zeros included."""
        door = self.model.doors[self.model.edges[edge].door]
        counts = self.flows[edge]
        return [counts.get(t, 0) for t in self.report_times if door.reports_at(t)]


def simulate(
    model: IndoorCrowdModel,
    horizon: int,
    seed: int,
    *,
    speed: float = 1.2,
    record_trajectories: bool = False,
    drop_rate: float = 0.0,
) -> SimState:
    """Move individual objects door by door until ``horizon``.

    At each report timestamp of a door, every directed edge through it draws a
    Poisson number of crossings with the edge's rate.  Only objects that have
    had time to walk from their entry door to the exit door, at the average
    speed slowed by the density-dependent lagging factor, may leave; Q
    partitions release objects strictly in arrival order.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng([seed, 3])
    start = model.start_time
    n = model.n_partitions
    parts = model.partitions
    objects: list[SimObject] = []
    members: list[Any] = []
    joins: dict[int, list[int]] = {}
    leaves: dict[int, list[int]] = {}
    trajectories: list[Trajectory] = []
    for v in range(n):
        count = int(math.floor(model.initial[v][0] + 1e-9))
        ids = list(range(len(objects), len(objects) + count))
        rng.shuffle(ids)
        rho = lagging(parts[v].kind, count / parts[v].area, parts[v].max_density)
        for oid in sorted(ids):
            objects.append(SimObject(oid, v, float(start), None, rho))
        if parts[v].kind is PartitionKind.QUEUE:
            members.append(deque(ids))
            joins[v] = list(ids)
            leaves[v] = []
        else:
            members.append(list(ids))
    if record_trajectories:
        for o in objects:
            p = random_point(model, o.partition, rng)
            trajectories.append(Trajectory(str(o.id), [TrajectoryPoint(float(start), p)]))
    counts = [len(m) for m in members]
    count_times = [[start] for _ in range(n)]
    count_values = [[c] for c in counts]
    flows: list[dict[int, int]] = [{} for _ in model.edges]

    stamps: set[int] = set()
    for d in model.doors:
        k = max(0, (start - d.report_origin) // d.report_period + 1)
        stamps.update(range(d.report_origin + k * d.report_period, horizon + 1, d.report_period))
    report_times = sorted(stamps)
    by_door_period: dict[tuple[int, int], list[int]] = {}
    for e in model.edges:
        if e.lam > 0:
            d = model.doors[e.door]
            by_door_period.setdefault((d.report_period, d.report_origin), []).append(e.index)
    state = SimState(model, start, horizon, seed, speed, objects, count_times, count_values, flows, joins, leaves, trajectories, report_times)

    def ready(o: SimObject, door: int, tau: int) -> bool:
        if o.entry_door is None:
            return True
        length = parts[o.partition].d2d.get((o.entry_door, door), 0.0)
        return o.entered_at + length / speed * o.rho <= tau

    for tau in report_times:
        active = [
            ei
            for (period, origin), edges in by_door_period.items()
            if tau >= origin and (tau - origin) % period == 0
            for ei in edges
        ]
        if not active:
            continue
        draws = rng.poisson([model.edges[ei].lam for ei in active])
        wanted: dict[int, list[int]] = {}
        for ei, k in zip(active, draws.tolist()):
            if k:
                wanted.setdefault(model.edges[ei].source, []).extend([ei] * k)
        moves: list[tuple[int, int]] = []
        for v, requests in wanted.items():
            # requests are served in random order; at most the current occupancy can leave
            order = rng.permutation(len(requests)).tolist()
            pool = members[v]
            taken: set[int] = set()
            if parts[v].kind is PartitionKind.QUEUE:
                head = 0
                for r in order:
                    if head >= len(pool):
                        break
                    ei = requests[r]
                    oid = pool[head]
                    if not ready(objects[oid], model.edges[ei].door, tau):
                        state.blocked_exits += 1
                        continue
                    moves.append((oid, ei))
                    head += 1
            else:
                for r in order:
                    if len(taken) >= len(pool):
                        break
                    ei = requests[r]
                    door = model.edges[ei].door
                    chosen = None
                    for _ in range(8):
                        oid = pool[int(rng.integers(len(pool)))]
                        if oid not in taken and ready(objects[oid], door, tau):
                            chosen = oid
                            break
                    if chosen is None:
                        for oid in pool:
                            if oid not in taken and ready(objects[oid], door, tau):
                                chosen = oid
                                break
                    if chosen is None:
                        state.blocked_exits += 1
                        continue
                    taken.add(chosen)
                    moves.append((chosen, ei))
        touched: set[int] = set()
        for oid, ei in moves:
            e = model.edges[ei]
            o = objects[oid]
            if parts[e.source].kind is PartitionKind.QUEUE:
                members[e.source].popleft()
                leaves[e.source].append(oid)
            else:
                members[e.source].remove(oid)
            if parts[e.target].kind is PartitionKind.QUEUE:
                members[e.target].append(oid)
                joins[e.target].append(oid)
            else:
                members[e.target].append(oid)
            o.log.append((e.source, o.entered_at, float(tau)))
            o.partition, o.entered_at, o.entry_door = e.target, float(tau), e.door
            flows[ei][tau] = flows[ei].get(tau, 0) + 1
            touched.update((e.source, e.target))
        for v in touched:
            count = len(members[v])
            count_times[v].append(tau)
            count_values[v].append(count)
        for oid, ei in moves:
            o = objects[oid]
            v = o.partition
            o.rho = lagging(parts[v].kind, len(members[v]) / parts[v].area, parts[v].max_density)
            if record_trajectories and not (drop_rate and rng.random() < drop_rate):
                p = random_point(model, v, rng)
                trajectories[oid].points.append(TrajectoryPoint(float(tau), p))
    return state


class _FrozenTruth:
    def __init__(self, sim: SimState) -> None:
        self.sim = sim
        self.model = sim.model
        self.derivation_calls = 0

    def population_at(self, v: int, t: float) -> float:
        return self.sim.population_at(v, t)


def truth(sim: SimState) -> _FrozenTruth:
    """Population source backed by the simulated counts."""
    return _FrozenTruth(sim)


def gold_search(
    sim: SimState,
    instance: QueryInstance,
    qt: QueryType | str,
    cfg: RoutingConfig | None = None,
) -> QueryResult:
    """The same search, costed with the simulator's true densities."""
    if instance.time < sim.start or instance.time > sim.horizon:
        raise SimulationHorizonError("query time outside the simulated span")
    return search(sim.model, instance.source, instance.target, instance.time, qt, cfg, session=truth(sim))


def query_horizon(instances: list[QueryInstance], speed: float = 1.2, slack: float = 1.25) -> int:
    """A simulation horizon comfortably covering every instance's travel."""
    worst = max((i.time + slack * 2.0 * math.e * i.distance / speed for i in instances), default=0.0)
    return int(math.ceil(worst))


def trajectory_points(sim: SimState) -> list[tuple[str, float, IndoorPoint]]:
    return [(t.object_id, p.timestamp, p.point) for t in sim.trajectories for p in t.points]
