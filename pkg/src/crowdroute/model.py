"""Indoor crowd model: partitions, doors, directed edges and geometry."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path as FsPath
from typing import Any, Iterable, Sequence

import jsonschema
from shapely.geometry import Point, Polygon, box

log = logging.getLogger(__name__)

INF = math.inf
# Numerical slack when checking that a point lies inside its partition.
POINT_TOLERANCE = 1e-6


class ModelError(ValueError):
    """Raised for documents that violate the model schema or invariants."""


class PartitionKind(str, Enum):
    QUEUE = "Q"
    RANDOM = "R"


@dataclass(frozen=True)
class IndoorPoint:
    partition: int
    x: float
    y: float


@dataclass(frozen=True)
class Door:
    id: int
    x: float
    y: float
    floor: int
    report_period: int
    pairs: tuple[tuple[int, int], ...]
    report_origin: int = 0

    def reports_at(self, t: int) -> bool:
        return t >= self.report_origin and (t - self.report_origin) % self.report_period == 0


@dataclass
class Partition:
    id: int
    kind: PartitionKind
    area: float
    max_density: float
    floor: int
    polygon: tuple[tuple[float, float], ...]
    enterable: tuple[int, ...] = ()
    leaveable: tuple[int, ...] = ()
    # (enter door, leave door) -> meters; also holds (d, d) -> 0.
    d2d: dict[tuple[int, int], float] = field(default_factory=dict)
    overrides: tuple[tuple[int, int, float], ...] = ()

    @property
    def capacity(self) -> float:
        return self.area * self.max_density

    @property
    def doors(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.enterable) | set(self.leaveable)))


@dataclass(frozen=True)
class Edge:
    index: int
    source: int
    target: int
    door: int
    lam: float


@dataclass(frozen=True)
class HistorySample:
    edge: int
    timestamp: int
    flow: float


class IndoorCrowdModel:
    """Directed partition graph with door-labelled edges.

    Built once (usually by :func:`load_model`) and treated as
    immutable afterwards; estimator sessions keep all mutable state.
    """

    def __init__(
        self,
        partitions: Sequence[Partition],
        doors: Sequence[Door],
        lambdas: dict[tuple[int, int, int], float],
        initial: dict[int, tuple[float, int]],
        history: Iterable[tuple[int, int, int, int, float]] = (),
    ) -> None:
        self.partitions = list(partitions)
        self.doors = list(doors)
        n_parts, n_doors = len(self.partitions), len(self.doors)
        if [p.id for p in self.partitions] != list(range(n_parts)):
            raise ModelError("partition ids must be dense and ordered from 0")
        if [d.id for d in self.doors] != list(range(n_doors)):
            raise ModelError("door ids must be dense and ordered from 0")

        enter: list[set[int]] = [set() for _ in range(n_parts)]
        leave: list[set[int]] = [set() for _ in range(n_parts)]
        self.door_enters: list[tuple[int, ...]] = []
        self.door_leaves: list[tuple[int, ...]] = []
        edges: list[Edge] = []
        self.edge_index: dict[tuple[int, int, int], int] = {}
        for door in self.doors:
            if door.report_period <= 0:
                raise ModelError(f"door {door.id}: report period must be positive")
            if not door.pairs:
                raise ModelError(f"door {door.id} has no directed pairs")
            for src, dst in door.pairs:
                for pid in (src, dst):
                    if not 0 <= pid < n_parts:
                        raise ModelError(f"dangling id: door {door.id} references partition {pid}")
                if src == dst:
                    raise ModelError(f"door {door.id}: pair ({src}, {dst}) loops on one partition")
                key = (src, dst, door.id)
                if key in self.edge_index:
                    raise ModelError(f"door {door.id}: duplicate pair ({src}, {dst})")
                lam = float(lambdas.get(key, 0.0))
                if not lam >= 0.0:
                    raise ModelError(f"negative lambda on edge {key}")
                self.edge_index[key] = len(edges)
                edges.append(Edge(len(edges), src, dst, door.id, lam))
                leave[src].add(door.id)
                enter[dst].add(door.id)
            self.door_enters.append(tuple(sorted({b for _, b in door.pairs})))
            self.door_leaves.append(tuple(sorted({a for a, _ in door.pairs})))
        for key in lambdas:
            if key not in self.edge_index:
                raise ModelError(f"dangling id: flow lambda for unknown edge {key}")
        self.edges = edges
        self.out_edges: list[tuple[int, ...]] = [() for _ in range(n_parts)]
        self.in_edges: list[tuple[int, ...]] = [() for _ in range(n_parts)]
        outs: list[list[int]] = [[] for _ in range(n_parts)]
        ins: list[list[int]] = [[] for _ in range(n_parts)]
        for e in edges:
            outs[e.source].append(e.index)
            ins[e.target].append(e.index)
        self.out_edges = [tuple(x) for x in outs]
        self.in_edges = [tuple(x) for x in ins]

        for part in self.partitions:
            if not part.area > 0:
                raise ModelError(f"partition {part.id}: non-positive area")
            if not part.max_density > 0:
                raise ModelError(f"partition {part.id}: non-positive max density")
            part.enterable = tuple(sorted(enter[part.id]))
            part.leaveable = tuple(sorted(leave[part.id]))
            part.d2d = self._build_d2d(part)
        self._shapes = [Polygon(p.polygon) for p in self.partitions]

        self.initial: list[tuple[float, int]] = []
        stamps = [t for _, t in initial.values()]
        default_t = max(stamps) if stamps else 0
        for pid in initial:
            if not 0 <= pid < n_parts:
                raise ModelError(f"dangling id: initial population for partition {pid}")
        for part in self.partitions:
            pop, ts = initial.get(part.id, (0.0, default_t))
            if pop < 0:
                raise ModelError(f"partition {part.id}: negative population")
            if pop > part.capacity * (1 + 1e-12):
                raise ModelError(
                    f"partition {part.id}: population exceeding capacity ({pop} > {part.capacity})"
                )
            self.initial.append((float(pop), int(ts)))
        # Every recorded population is taken as valid at the latest record.
        self.start_time: int = default_t

        self.history: list[HistorySample] = []
        for src, dst, did, ts, flow in history:
            key = (src, dst, did)
            if key not in self.edge_index:
                raise ModelError(f"dangling id: flow history for unknown edge {key}")
            if flow < 0:
                raise ModelError(f"negative historical flow on edge {key}")
            self.history.append(HistorySample(self.edge_index[key], int(ts), float(flow)))

    # -- geometry -----------------------------------------------------------

    def _build_d2d(self, part: Partition) -> dict[tuple[int, int], float]:
        overrides: dict[tuple[int, int], float] = {}
        for a, b, meters in part.overrides:
            if a not in part.doors or b not in part.doors:
                raise ModelError(f"dangling id: d2d entry ({a}, {b}) on partition {part.id}")
            if meters < 0:
                raise ModelError(f"partition {part.id}: negative d2d entry ({a}, {b})")
            overrides[(a, b)] = float(meters)
        for (a, b), meters in list(overrides.items()):
            back = overrides.setdefault((b, a), meters)
            if back != meters and a in part.leaveable and b in part.enterable:
                raise ModelError(f"partition {part.id}: asymmetric d2d entries for doors {a}, {b}")
        table: dict[tuple[int, int], float] = {}
        for a in part.enterable:
            for b in part.leaveable:
                if a == b:
                    table[(a, b)] = 0.0
                    continue
                if (a, b) in overrides:
                    meters = overrides[(a, b)]
                else:
                    da, db = self.doors[a], self.doors[b]
                    if da.floor != db.floor:
                        raise ModelError(
                            f"partition {part.id}: doors {a} and {b} lie on different floors;"
                            " an explicit d2d entry is required"
                        )
                    meters = math.hypot(da.x - db.x, da.y - db.y)
                if meters <= 0:
                    raise ModelError(f"partition {part.id}: doors {a} and {b} coincide")
                table[(a, b)] = meters
        return table

    def d2d(self, di: int, dj: int) -> float:
        """Shortest door-to-door length through any partition entered by ``di`` and left by ``dj``."""
        self._check_door(di)
        self._check_door(dj)
        best = INF
        for v in self.door_enters[di]:
            meters = self.partitions[v].d2d.get((di, dj))
            if meters is not None and meters < best:
                best = meters
        return best

    def point(self, partition: int, x: float, y: float) -> IndoorPoint:
        """Validated indoor point; raises ModelError when outside its partition."""
        if not 0 <= partition < len(self.partitions):
            raise ModelError(f"dangling id: unknown partition {partition}")
        shape = self._shapes[partition]
        if shape.distance(Point(x, y)) > POINT_TOLERANCE:
            raise ModelError(f"point ({x}, {y}) lies outside partition {partition}")
        return IndoorPoint(partition, float(x), float(y))

    def locate(self, x: float, y: float, floor: int) -> int | None:
        for part in self.partitions:
            if part.floor == floor and self._shapes[part.id].distance(Point(x, y)) <= POINT_TOLERANCE:
                return part.id
        return None

    def point_door_distance(self, p: IndoorPoint, d: int) -> float:
        door = self.doors[d]
        return math.hypot(p.x - door.x, p.y - door.y)

    def segment_length(self, a: int | IndoorPoint, b: int | IndoorPoint, v: int) -> float:
        """Length of one path segment inside partition ``v``."""
        if isinstance(a, IndoorPoint):
            if isinstance(b, IndoorPoint):
                return math.hypot(a.x - b.x, a.y - b.y)
            return self.point_door_distance(a, b)
        if isinstance(b, IndoorPoint):
            return self.point_door_distance(b, a)
        meters = self.partitions[v].d2d.get((a, b))
        if meters is None:
            raise ModelError(f"doors {a} -> {b} are not traversable through partition {v}")
        return meters

    def _check_door(self, d: int) -> None:
        if not 0 <= d < len(self.doors):
            raise ModelError(f"unknown door id {d}")

    # -- summaries ----------------------------------------------------------

    @property
    def n_partitions(self) -> int:
        return len(self.partitions)

    def connection_count(self) -> int:
        """Edges with both directions of a door between the same partitions counted once."""
        return len({(min(e.source, e.target), max(e.source, e.target), e.door) for e in self.edges})

    def capacities(self) -> list[float]:
        return [p.capacity for p in self.partitions]


@dataclass(frozen=True)
class PathSegment:
    partition: int
    start: int | IndoorPoint
    end: int | IndoorPoint


@dataclass(frozen=True)
class Path:
    source: IndoorPoint
    doors: tuple[int, ...]
    target: IndoorPoint
    partitions: tuple[int, ...]  # one per segment
    segment_costs: tuple[Any, ...] = ()
    total: Any = None

    def segments(self) -> list[PathSegment]:
        nodes: list[int | IndoorPoint] = [self.source, *self.doors, self.target]
        return [PathSegment(v, nodes[i], nodes[i + 1]) for i, v in enumerate(self.partitions)]


def validate_path(model: IndoorCrowdModel, path: Path) -> None:
    if len(path.partitions) != len(path.doors) + 1:
        raise ModelError("path needs exactly one partition per segment")
    if path.partitions[0] != path.source.partition or path.partitions[-1] != path.target.partition:
        raise ModelError("path endpoints do not match the segment partitions")
    for i, d in enumerate(path.doors):
        before, after = path.partitions[i], path.partitions[i + 1]
        if (before, after, d) not in model.edge_index:
            raise ModelError(f"door {d} does not lead from partition {before} to {after}")


def path_distance(model: IndoorCrowdModel, path: Path) -> float:
    validate_path(model, path)
    return sum(model.segment_length(s.start, s.end, s.partition) for s in path.segments())


# -- GTG conversion ----------------------------------------------------------


@dataclass(frozen=True)
class GtgEdge:
    source: int
    target: int
    partition: int
    length: float


@dataclass
class GeneralTimeDependentGraph:
    """Doors as vertices, one edge per ordered door pair sharing a partition."""

    model: IndoorCrowdModel
    edges: list[GtgEdge]
    # door -> indices of edges leaving it
    adjacency: list[list[int]]
    # partition -> indices of edges running through it
    by_partition: list[list[int]]

    @property
    def vertex_count(self) -> int:
        return len(self.adjacency)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def undirected_edge_count(self) -> int:
        return len({(min(e.source, e.target), max(e.source, e.target), e.partition) for e in self.edges})


def to_gtg(model: IndoorCrowdModel) -> GeneralTimeDependentGraph:
    edges: list[GtgEdge] = []
    adjacency: list[list[int]] = [[] for _ in model.doors]
    by_partition: list[list[int]] = [[] for _ in model.partitions]
    for part in model.partitions:
        for a in part.enterable:
            for b in part.leaveable:
                if a == b:
                    continue
                adjacency[a].append(len(edges))
                by_partition[part.id].append(len(edges))
                edges.append(GtgEdge(a, b, part.id, part.d2d[(a, b)]))
    return GeneralTimeDependentGraph(model, edges, adjacency, by_partition)


# -- JSON documents ----------------------------------------------------------

_NUM = {"type": "number"}
_INT = {"type": "integer"}
MODEL_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["partitions", "doors"],
    "properties": {
        "partitions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind", "area", "maxDensity", "floor"],
                "properties": {
                    "id": _INT,
                    "kind": {"enum": ["Q", "R"]},
                    "area": _NUM,
                    "maxDensity": _NUM,
                    "floor": _INT,
                    "polygon": {
                        "type": "array",
                        "minItems": 3,
                        "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                    },
                    "bbox": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
                    "d2d": {"type": "array", "items": {"type": "array", "minItems": 3, "maxItems": 3}},
                },
                "oneOf": [{"required": ["polygon"]}, {"required": ["bbox"]}],
            },
        },
        "doors": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "x", "y", "floor", "reportPeriodSec", "directedPairs"],
                "properties": {
                    "id": _INT,
                    "x": _NUM,
                    "y": _NUM,
                    "floor": _INT,
                    "reportPeriodSec": _INT,
                    "reportOriginSec": _INT,
                    "directedPairs": {
                        "type": "array",
                        "items": {"type": "array", "items": _INT, "minItems": 2, "maxItems": 2},
                    },
                },
            },
        },
        "initialPopulations": {"type": "array", "items": {"type": "array"}},
        "flowLambdas": {"type": "array", "items": {"type": "array"}},
        "flowHistory": {"type": "array", "items": {"type": "array"}},
    },
}


# Row tables are checked by hand: schema validation of tens of thousands of rows is slow.
_ROW_TYPES = {
    "initialPopulations": "ifi",
    "flowLambdas": "iiif",
    "flowHistory": "iiiif",
}
_VALIDATOR = jsonschema.Draft202012Validator(MODEL_SCHEMA)


def _check_rows(document: dict[str, Any]) -> None:
    for key, types in _ROW_TYPES.items():
        for row in document.get(key, ()):
            if len(row) != len(types):
                raise ModelError(f"schema violation: {key} row {row!r} needs {len(types)} fields")
            for value, kind in zip(row, types):
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
                if kind == "i":
                    ok = ok and float(value).is_integer()
                if not ok:
                    raise ModelError(f"schema violation: {key} row {row!r} has a bad field {value!r}")


def load_model(document: dict[str, Any]) -> IndoorCrowdModel:
    error = jsonschema.exceptions.best_match(_VALIDATOR.iter_errors(document))
    if error is not None:
        raise ModelError(f"schema violation: {error.message}")
    _check_rows(document)

    parts_doc = sorted(document["partitions"], key=lambda p: p["id"])
    partitions = []
    for p in parts_doc:
        if "polygon" in p:
            polygon = tuple((float(x), float(y)) for x, y in p["polygon"])
        else:
            x0, y0, x1, y1 = p["bbox"]
            polygon = tuple(box(x0, y0, x1, y1).exterior.coords)[:-1]
        partitions.append(
            Partition(
                id=p["id"],
                kind=PartitionKind(p["kind"]),
                area=float(p["area"]),
                max_density=float(p["maxDensity"]),
                floor=p["floor"],
                polygon=polygon,
                overrides=tuple((int(a), int(b), float(m)) for a, b, m in p.get("d2d", [])),
            )
        )
    doors = [
        Door(
            id=d["id"],
            x=float(d["x"]),
            y=float(d["y"]),
            floor=d["floor"],
            report_period=d["reportPeriodSec"],
            report_origin=d.get("reportOriginSec", 0),
            pairs=tuple((a, b) for a, b in d["directedPairs"]),
        )
        for d in sorted(document["doors"], key=lambda d: d["id"])
    ]
    lambdas: dict[tuple[int, int, int], float] = {}
    for a, b, d, lam in document.get("flowLambdas", []):
        lambdas[(int(a), int(b), int(d))] = lam
    initial: dict[int, tuple[float, int]] = {}
    for pid, pop, ts in document.get("initialPopulations", []):
        pid = int(pid)
        if pid in initial:
            raise ModelError(f"partition {pid} has more than one initial population")
        initial[pid] = (float(pop), int(ts))
    history = [(int(a), int(b), int(d), int(t), f) for a, b, d, t, f in document.get("flowHistory", [])]
    return IndoorCrowdModel(partitions, doors, lambdas, initial, history)  # type: ignore[arg-type]


def model_to_document(model: IndoorCrowdModel) -> dict[str, Any]:
    partitions = []
    for p in model.partitions:
        entry: dict[str, Any] = {
            "id": p.id,
            "kind": p.kind.value,
            "area": p.area,
            "maxDensity": p.max_density,
            "floor": p.floor,
            "polygon": [list(xy) for xy in p.polygon],
        }
        if p.overrides:
            entry["d2d"] = [[a, b, m] for a, b, m in p.overrides]
        partitions.append(entry)
    doors = []
    for d in model.doors:
        entry = {
            "id": d.id,
            "x": d.x,
            "y": d.y,
            "floor": d.floor,
            "reportPeriodSec": d.report_period,
            "directedPairs": [list(pair) for pair in d.pairs],
        }
        if d.report_origin:
            entry["reportOriginSec"] = d.report_origin
        doors.append(entry)
    doc: dict[str, Any] = {
        "partitions": partitions,
        "doors": doors,
        "initialPopulations": [[i, pop, ts] for i, (pop, ts) in enumerate(model.initial)],
        "flowLambdas": [[e.source, e.target, e.door, e.lam] for e in model.edges],
    }
    if model.history:
        doc["flowHistory"] = [
            [model.edges[h.edge].source, model.edges[h.edge].target, model.edges[h.edge].door, h.timestamp, h.flow]
            for h in model.history
        ]
    return doc


def read_model(path: str | FsPath) -> IndoorCrowdModel:
    with open(path, encoding="utf-8") as fh:
        return load_model(json.load(fh))


def write_model(model: IndoorCrowdModel, path: str | FsPath) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_document(model), fh, indent=1)
        fh.write("\n")


def with_lambdas(model: IndoorCrowdModel, lambdas: dict[tuple[int, int, int], float]) -> IndoorCrowdModel:
    """Copy of ``model`` with some edge rates replaced."""
    doc = model_to_document(model)
    for row in doc["flowLambdas"]:
        key = (row[0], row[1], row[2])
        if key in lambdas:
            row[3] = float(lambdas[key])
    return load_model(doc)
