"""Synthetic multi-floor spaces, small random models and query workloads."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from shapely.geometry import Point, Polygon

from ..model import IndoorCrowdModel, IndoorPoint, load_model
from ..router import distance_dijkstra

FLOOR_SIDE = 1368.0
HALL_WIDTH = 20.0
# per-floor door count relative to partition count, taken from the reference floor
DOORS_PER_PARTITION = 216 / 141

GRID_FLOORS = (3, 5, 7, 9)
GRID_OBJECTS = (300, 600, 900, 1200, 1500)
GRID_TI = (5, 10, 15, 20)
GRID_S2T = (900, 1100, 1300, 1500, 1700)


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceSpec:
    floors: int = 5
    q_per_floor: int = 14
    beta: float = 1.0
    stair_length: float = 20.0
    grid: int = 5
    split_rooms: int = 12
    seed: int = 0

    def validate(self, on_grid: bool = False) -> None:
        if self.floors < 1 or self.q_per_floor < 0 or self.grid < 2 or self.split_rooms < 0:
            raise SpecError("space counts must be positive")
        if not self.beta > 0 or not self.stair_length > 0:
            raise SpecError("beta and stairway length must be positive")
        if on_grid and self.floors not in GRID_FLOORS:
            raise SpecError(f"floors must be one of {GRID_FLOORS}, got {self.floors}")


@dataclass(frozen=True)
class WorkloadSpec:
    objects: int = 600
    ti: int = 10
    lambda_range: tuple[float, float] = (0.0, 3.0)
    s2t: float = 1300.0
    instances: int = 100
    history_reports: int = 100
    seed: int = 0

    def validate(self, on_grid: bool = False) -> None:
        lo, hi = self.lambda_range
        if self.objects < 0 or self.ti <= 0 or self.instances < 0 or self.history_reports < 0:
            raise SpecError("workload counts must be non-negative and TI positive")
        if not 0 <= lo <= hi:
            raise SpecError("lambda range must satisfy 0 <= low <= high")
        if not self.s2t > 0:
            raise SpecError("s2t must be positive")
        if on_grid:
            if self.objects not in GRID_OBJECTS:
                raise SpecError(f"|o| must be one of {GRID_OBJECTS}, got {self.objects}")
            if self.ti not in GRID_TI:
                raise SpecError(f"TI must be one of {GRID_TI}, got {self.ti}")
            if self.s2t not in GRID_S2T:
                raise SpecError(f"s2t must be one of {GRID_S2T}, got {self.s2t}")


def spec_from_dict(cls: type, data: dict[str, Any]) -> Any:
    known = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
    unknown = set(data) - known
    if unknown:
        raise SpecError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    if "lambda_range" in data:
        data = {**data, "lambda_range": tuple(data["lambda_range"])}
    return cls(**data)


def spec_to_dict(spec: Any) -> dict[str, Any]:
    out = asdict(spec)
    if "lambda_range" in out:
        out["lambda_range"] = list(out["lambda_range"])
    return out


# -- floor template -------------------------------------------------------------

Rect = tuple[float, float, float, float]


def _shared_wall(a: Rect, b: Rect, min_len: float = 2.0) -> tuple[float, float] | None:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    for xa, xb in ((ax1, bx0), (bx1, ax0)):
        if math.isclose(xa, xb, abs_tol=1e-9):
            lo, hi = max(ay0, by0), min(ay1, by1)
            if hi - lo >= min_len:
                return (xa, (lo + hi) / 2)
    for ya, yb in ((ay1, by0), (by1, ay0)):
        if math.isclose(ya, yb, abs_tol=1e-9):
            lo, hi = max(ax0, bx0), min(ax1, bx1)
            if hi - lo >= min_len:
                return ((lo + hi) / 2, ya)
    return None


@dataclass
class _Floor:
    rects: list[Rect] = field(default_factory=list)
    roles: list[str] = field(default_factory=list)
    doors: list[tuple[int, int, float, float]] = field(default_factory=list)
    junctions: dict[tuple[int, int], int] = field(default_factory=dict)


def _floor_template(spec: SpaceSpec, rng: np.random.Generator) -> _Floor:
    g, w = spec.grid, HALL_WIDTH
    pitch = (FLOOR_SIDE - w) / (g - 1)
    fl = _Floor()

    def add(rect: Rect, role: str) -> int:
        fl.rects.append(rect)
        fl.roles.append(role)
        return len(fl.rects) - 1

    for i in range(g):
        for j in range(g):
            fl.junctions[(i, j)] = add((i * pitch, j * pitch, i * pitch + w, j * pitch + w), "junction")
    halls: list[int] = []
    for i in range(g):
        for j in range(g):
            if i < g - 1:
                halls.append(add((i * pitch + w, j * pitch, (i + 1) * pitch, j * pitch + w), "hallway"))
                fl.doors.append((fl.junctions[(i, j)], halls[-1], *_shared_wall(fl.rects[fl.junctions[(i, j)]], fl.rects[halls[-1]])))  # type: ignore[misc]
                fl.doors.append((halls[-1], fl.junctions[(i + 1, j)], *_shared_wall(fl.rects[halls[-1]], fl.rects[fl.junctions[(i + 1, j)]])))  # type: ignore[misc]
            if j < g - 1:
                halls.append(add((i * pitch, j * pitch + w, i * pitch + w, (j + 1) * pitch), "hallway"))
                fl.doors.append((fl.junctions[(i, j)], halls[-1], *_shared_wall(fl.rects[fl.junctions[(i, j)]], fl.rects[halls[-1]])))  # type: ignore[misc]
                fl.doors.append((halls[-1], fl.junctions[(i, j + 1)], *_shared_wall(fl.rects[halls[-1]], fl.rects[fl.junctions[(i, j + 1)]])))  # type: ignore[misc]

    blocks = [(i, j) for i in range(g - 1) for j in range(g - 1)]
    split = set(map(tuple, rng.permutation(blocks)[: min(spec.split_rooms, len(blocks))].tolist()))
    rooms: list[int] = []
    for i, j in blocks:
        x0, y0 = i * pitch + w, j * pitch + w
        half = (pitch - w) / 2
        quads = [(x0 + a * half, y0 + b * half, x0 + (a + 1) * half, y0 + (b + 1) * half) for a in (0, 1) for b in (0, 1)]
        if (i, j) in split:
            qx0, qy0, qx1, qy1 = quads.pop(int(rng.integers(4)))
            mid = (qx0 + qx1) / 2
            quads += [(qx0, qy0, mid, qy1), (mid, qy0, qx1, qy1)]
        rooms.extend(add(q, "room") for q in quads)

    # every room gets one door to a hallway, then extra doors up to the target count
    hall_walls: dict[int, list[tuple[int, tuple[float, float]]]] = {}
    for r in rooms:
        hall_walls[r] = [(h, wall) for h in halls if (wall := _shared_wall(fl.rects[r], fl.rects[h])) is not None]
    extra: list[tuple[int, int, tuple[float, float]]] = []
    for r in rooms:
        options = hall_walls[r]
        k = int(rng.integers(len(options)))
        fl.doors.append((r, options[k][0], *options[k][1]))
        extra += [(r, h, wall) for idx, (h, wall) in enumerate(options) if idx != k]
    for a_idx, a in enumerate(rooms):
        for b in rooms[a_idx + 1 :]:
            wall = _shared_wall(fl.rects[a], fl.rects[b])
            if wall is not None:
                extra.append((a, b, wall))
    target = round(len(fl.rects) * DOORS_PER_PARTITION)
    need = max(0, min(len(extra), target - len(fl.doors)))
    for k in sorted(rng.permutation(len(extra))[:need].tolist()):
        a, b, (x, y) = extra[k]
        fl.doors.append((a, b, x, y))
    return fl


def generate_space(
    space: SpaceSpec | None = None, workload: WorkloadSpec | None = None
) -> tuple[IndoorCrowdModel, dict[str, Any]]:
    """Multi-floor synthetic space with door rates, report periods and initial crowds."""
    space = space or SpaceSpec()
    workload = workload or WorkloadSpec()
    space.validate()
    workload.validate()
    rng = np.random.default_rng([space.seed, workload.seed, 7])
    fl = _floor_template(space, rng)
    per_floor = len(fl.rects)
    partitions: list[dict[str, Any]] = []
    doors: list[dict[str, Any]] = []
    t0 = workload.history_reports * workload.ti

    for f in range(space.floors):
        base = f * per_floor
        for k, (x0, y0, x1, y1) in enumerate(fl.rects):
            area = (x1 - x0) * (y1 - y0)
            partitions.append(
                {
                    "id": base + k,
                    "kind": "R",
                    "area": area,
                    "maxDensity": space.beta,
                    "floor": f,
                    "bbox": [x0, y0, x1, y1],
                }
            )
        for a, b, x, y in fl.doors:
            doors.append(
                {"id": len(doors), "x": x, "y": y, "floor": f, "directedPairs": [[base + a, base + b], [base + b, base + a]]}
            )
    g = space.grid
    stair_junctions = sorted({(1, 1), (g - 2, 1), (1, g - 2), (g - 2, g - 2)})
    for f in range(space.floors - 1):
        for s, key in enumerate(stair_junctions):
            low = f * per_floor + fl.junctions[key]
            high = (f + 1) * per_floor + fl.junctions[key]
            jx0, jy0, jx1, jy1 = fl.rects[fl.junctions[key]]
            cx, cy = (jx0 + jx1) / 2, (jy0 + jy1) / 2
            sid = len(partitions)
            x0 = FLOOR_SIDE + 10 + 30 * s
            y0 = 30.0 * f
            da, db = len(doors), len(doors) + 1
            # upward and downward stair doors of one junction sit apart
            doors.append({"id": da, "x": cx - 3.0, "y": cy, "floor": f, "directedPairs": [[low, sid], [sid, low]]})
            doors.append({"id": db, "x": cx + 3.0, "y": cy, "floor": f + 1, "directedPairs": [[high, sid], [sid, high]]})
            partitions.append(
                {
                    "id": sid,
                    "kind": "R",
                    "area": 4.0 * space.stair_length,
                    "maxDensity": space.beta,
                    "floor": f,
                    "bbox": [x0, y0, x0 + 4.0, y0 + space.stair_length],
                    "d2d": [[da, db, space.stair_length]],
                }
            )

    door_count = [0] * len(partitions)
    for d in doors:
        for a, _ in d["directedPairs"]:
            door_count[a] += 1
    q_ids: list[int] = []
    for f in range(space.floors):
        two_door = [p["id"] for p in partitions[f * per_floor : (f + 1) * per_floor] if door_count[p["id"]] == 2]
        picked = rng.permutation(two_door)[: space.q_per_floor].tolist()
        q_ids += sorted(picked)
        for pid in picked:
            partitions[pid]["kind"] = "Q"

    for d in doors:
        d["reportPeriodSec"] = int(rng.integers(1, 6)) * workload.ti
    lo, hi = workload.lambda_range
    lambdas = []
    for d in doors:
        for a, b in d["directedPairs"]:
            lambdas.append([a, b, d["id"], float(rng.uniform(lo, hi))])
    initial = []
    for p in partitions:
        cap = math.floor(p["area"] * p["maxDensity"])
        initial.append([p["id"], float(min(int(rng.integers(0, workload.objects + 1)), cap)), t0])
    history = []
    for a, b, did, lam in lambdas:
        period = doors[did]["reportPeriodSec"]
        counts = rng.poisson(lam, size=t0 // period)
        history += [[a, b, did, (n + 1) * period, float(c)] for n, c in enumerate(counts.tolist())]

    doc = {"partitions": partitions, "doors": doors, "initialPopulations": initial, "flowLambdas": lambdas, "flowHistory": history}
    model = load_model(doc)
    metadata = {
        "space": spec_to_dict(space),
        "workload": spec_to_dict(workload),
        "partitionsPerFloor": per_floor,
        "doorsPerFloor": len(fl.doors),
        "stairways": len(stair_junctions) * (space.floors - 1),
        "partitions": model.n_partitions,
        "doors": len(model.doors),
        "edges": len(model.edges),
        "qPartitions": q_ids,
        "startTime": t0,
    }
    return model, metadata


# -- small random models ----------------------------------------------------------


def generate_random_model(
    seed: int,
    n_partitions: int = 8,
    *,
    cell: float = 10.0,
    extra_door_prob: float = 0.35,
    one_way_prob: float = 0.15,
    multi_door_prob: float = 0.0,
    lambda_max: float = 3.0,
    fill: float = 0.6,
    periods: tuple[int, ...] = (5, 10, 15, 20),
    start_time: int = 0,
    bidirectional: bool = False,
) -> IndoorCrowdModel:
    """Grid of rectangular partitions joined by randomly placed doors; always loads cleanly."""
    rng = np.random.default_rng(seed)
    cols = max(1, math.ceil(math.sqrt(n_partitions)))
    cells = [(k // cols, k % cols) for k in range(n_partitions)]
    index = {rc: k for k, rc in enumerate(cells)}
    rects = [(c * cell, r * cell, (c + 1) * cell, (r + 1) * cell) for r, c in cells]
    adjacent = [(index[(r, c)], index[nb]) for r, c in cells for nb in ((r, c + 1), (r + 1, c)) if nb in index]
    order = rng.permutation(len(adjacent)).tolist()
    # random spanning tree first so the layout is connected, then optional extra doors
    parent = list(range(n_partitions))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    chosen: list[tuple[int, int, bool]] = []
    for k in order:
        a, b = adjacent[k]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            chosen.append((a, b, True))
        elif rng.random() < extra_door_prob:
            chosen.append((a, b, False))
    chosen.sort(key=lambda x: adjacent.index((x[0], x[1])))
    doors = []
    for a, b, _ in chosen:
        (x0, y0, x1, y1), (u0, w0, u1, w1) = rects[a], rects[b]
        if math.isclose(x1, u0):
            x, y = x1, float(rng.uniform(max(y0, w0) + 1, min(y1, w1) - 1))
        else:
            x, y = float(rng.uniform(max(x0, u0) + 1, min(x1, u1) - 1)), y1
        pairs = [[a, b], [b, a]]
        if not bidirectional and rng.random() < one_way_prob:
            pairs = [pairs[int(rng.integers(2))]]
        if multi_door_prob and rng.random() < multi_door_prob:
            third = [k for k in range(n_partitions) if k not in (a, b)]
            if third:
                c = int(rng.choice(third))
                pairs += [[a, c], [c, a]] if bidirectional else [[a, c]]
        doors.append({"id": len(doors), "x": x, "y": y, "floor": 0, "reportPeriodSec": int(rng.choice(periods)), "directedPairs": pairs})
    partitions = []
    initial = []
    lambdas = []
    for k, (x0, y0, x1, y1) in enumerate(rects):
        area = (x1 - x0) * (y1 - y0)
        max_density = float(rng.uniform(0.5, 2.0))
        partitions.append(
            {"id": k, "kind": "Q" if rng.random() < 0.3 else "R", "area": area, "maxDensity": max_density, "floor": 0, "bbox": [x0, y0, x1, y1]}
        )
        initial.append([k, float(rng.uniform(0, fill * area * max_density)), start_time])
    for d in doors:
        for a, b in d["directedPairs"]:
            lambdas.append([a, b, d["id"], float(rng.uniform(0, lambda_max))])
    return load_model({"partitions": partitions, "doors": doors, "initialPopulations": initial, "flowLambdas": lambdas})


# -- workloads ----------------------------------------------------------------------


@dataclass(frozen=True)
class QueryInstance:
    index: int
    source: IndoorPoint
    target: IndoorPoint
    time: int
    distance: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "source": {"partition": self.source.partition, "x": self.source.x, "y": self.source.y},
            "target": {"partition": self.target.partition, "x": self.target.x, "y": self.target.y},
            "time": self.time,
            "distance": self.distance,
        }

    @classmethod
    def from_dict(cls, model: IndoorCrowdModel, data: dict[str, Any]) -> QueryInstance:
        s, t = data["source"], data["target"]
        return cls(
            int(data.get("index", 0)),
            model.point(int(s["partition"]), float(s["x"]), float(s["y"])),
            model.point(int(t["partition"]), float(t["x"]), float(t["y"])),
            int(data["time"]),
            float(data.get("distance", math.nan)),
        )


def random_point(model: IndoorCrowdModel, v: int, rng: np.random.Generator, near: tuple[float, float] | None = None, radius: float = math.inf) -> IndoorPoint:
    poly = Polygon(model.partitions[v].polygon)
    x0, y0, x1, y1 = poly.bounds
    if near is not None:
        x0, y0 = max(x0, near[0] - radius), max(y0, near[1] - radius)
        x1, y1 = min(x1, near[0] + radius), min(y1, near[1] + radius)
    for _ in range(1000):
        x, y = float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1))
        if poly.contains(Point(x, y)):
            return IndoorPoint(v, x, y)
    c = poly.representative_point()
    return IndoorPoint(v, float(c.x), float(c.y))


def _door_distances(model: IndoorCrowdModel, ps: IndoorPoint) -> dict[int, float]:
    import heapq

    dist: dict[int, float] = {}
    via: dict[int, int] = {}
    heap = [(model.point_door_distance(ps, d), d, ps.partition) for d in model.partitions[ps.partition].leaveable]
    heapq.heapify(heap)
    while heap:
        dd, d, came = heapq.heappop(heap)
        if d in dist:
            continue
        dist[d], via[d] = dd, came
        for v in model.door_enters[d]:
            if v == came:
                continue
            d2d = model.partitions[v].d2d
            for nxt in model.partitions[v].leaveable:
                if nxt != d and nxt not in dist:
                    heapq.heappush(heap, (dd + d2d[(d, nxt)], nxt, v))
    return dist


def generate_workload(
    model: IndoorCrowdModel,
    spec: WorkloadSpec | None = None,
    tolerance: float = 0.05,
    candidates: list[int] | None = None,
) -> list[QueryInstance]:
    """Source/target pairs whose shortest indoor distance is within ``tolerance`` of s2t."""
    spec = spec or WorkloadSpec()
    spec.validate()
    rng = np.random.default_rng([spec.seed, 11])
    if candidates is None:
        # stairways have off-plan polygons; keep endpoints on regular partitions
        candidates = [p.id for p in model.partitions if not p.overrides]
    lo, hi = spec.s2t * (1 - tolerance), spec.s2t * (1 + tolerance)
    instances: list[QueryInstance] = []
    best = 0.0
    attempts = 0
    while len(instances) < spec.instances:
        attempts += 1
        if attempts > 50 * max(1, spec.instances) + 200:
            raise SpecError(f"s2t={spec.s2t} is not realizable; the longest distance seen was {best:.1f} m")
        ps = random_point(model, int(rng.choice(candidates)), rng)
        dist = _door_distances(model, ps)
        if not dist:
            continue
        best = max(best, max(dist.values()))
        near = [d for d, m in dist.items() if lo <= m <= hi]
        if not near:
            continue
        d = int(rng.choice(near))
        targets = [v for v in model.door_enters[d] if v in candidates]
        if not targets:
            continue
        door = model.doors[d]
        pt = random_point(model, int(rng.choice(targets)), rng, near=(door.x, door.y), radius=tolerance * spec.s2t / 2)
        found = distance_dijkstra(model, ps, pt)
        if found is None or not lo <= found[0] <= hi:
            continue
        instances.append(QueryInstance(len(instances), ps, pt, model.start_time, found[0]))
    return instances
