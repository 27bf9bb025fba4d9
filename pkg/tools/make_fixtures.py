"""Regenerate the hand-authored fixtures in src/crowdroute/data."""

from __future__ import annotations

import json
import math
from pathlib import Path

from scipy.optimize import brentq

DATA = Path(__file__).resolve().parents[1] / "src" / "crowdroute" / "data"


def dist(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _door(i, x, y, pairs, period=10):
    return {"id": i, "x": x, "y": y, "floor": 0, "reportPeriodSec": period, "directedPairs": pairs}


def _both(a, b):
    return [[a, b], [b, a]]


def nine_partition_fixture() -> dict:
    # crowded partitions: (kind, population, area); ratio = population / area with maxDensity 1
    area4 = 90 / math.log(8 / 3)  # lagging 1 + 8/3 over a 30 m queue
    area6 = 15 / math.log(1.5)  # lagging 2.5 over a 3 m queue
    w4 = area4 / 30
    top = 2 + w4
    ps, pt = (-1.5, 0.0), (30.5, 0.0)
    d3, d6 = (-0.5, 2.2), (29.5, 2.2)
    d7, d9 = (31.0, top + 1.8), (33.4, top)
    # shortest-distance budget of each candidate path: 32, 35 and 48 m
    head2 = 35 - 30 - dist(d6, pt)
    x1 = brentq(lambda x: dist(ps, (x, 1.5)) + dist((x, 1.5), d3) - head2, -5.0, -0.5)
    d1 = (x1, 1.5)
    tail3 = dist(d7, d9) + dist(d9, pt)
    x4 = brentq(lambda x: dist(ps, d1) + dist(d1, (x, top)) + dist((x, top), d7) + tail3 - 48, -5.0, -0.5)
    parts = [
        ("R", 22.5, [-5, -3, 0, 1.5]),
        ("R", 4.5 * (top - 1.5), [-5, 1.5, -0.5, top]),
        ("R", 17.0, [0, -0.5, 17, 0.5]),
        ("Q", area4, [-0.5, 2, 29.5, top]),
        ("R", 144.0, [-5, top, 31, top + 4]),
        ("Q", area6, [31, top, 42, top + area6 / 11]),
        ("R", 0.0, None),
        ("Q", 12.0, [17, -0.5, 29, 0.5]),
        ("R", 216.0, [-5, top + 4, 31, top + 10]),
    ]
    v7 = [[29, -3], [42, -3], [42, top], [29.5, top], [29.5, 0.5], [29, 0.5]]
    v7_area = 13 * (top + 3) - 0.5 * (top - 0.5)
    partitions = []
    for i, (kind, area, bbox) in enumerate(parts):
        p = {"id": i, "kind": kind, "area": area if bbox else v7_area, "maxDensity": 1.0, "floor": 0}
        if bbox:
            p["bbox"] = bbox
        else:
            p["polygon"] = v7
        partitions.append(p)
    doors = [
        _door(0, d1[0], d1[1], _both(0, 1)),
        _door(1, 0.0, 0.0, [[0, 2]]),
        _door(2, d3[0], d3[1], _both(1, 3)),
        _door(3, x4, top, _both(1, 4)),
        _door(4, 17.0, 0.0, _both(2, 7)),
        _door(5, d6[0], d6[1], _both(3, 6)),
        _door(6, d7[0], d7[1], _both(4, 5)),
        _door(7, 29.0, 0.0, _both(7, 6)),
        _door(8, d9[0], d9[1], _both(5, 6)),
        _door(9, 10.0, top + 4, _both(4, 8)),
    ]
    populations = {2: 17.0, 3: 90.0, 5: 15.0, 7: 12.0}
    lambdas = []
    for d in doors:
        for a, b in d["directedPairs"]:
            lambdas.append([a, b, d["id"], 0.0])
    return {
        "partitions": partitions,
        "doors": doors,
        "initialPopulations": [[i, populations.get(i, 0.0), 0] for i in range(9)],
        "flowLambdas": lambdas,
    }


def nine_partition_query(qt: str) -> dict:
    return {
        "type": qt,
        "source": {"partition": 0, "x": -1.5, "y": 0.0},
        "target": {"partition": 6, "x": 30.5, "y": 0.0},
        "time": 0,
        "estimator": "local",
        "speed": 1.25,
    }


def three_partition_fixture() -> dict:
    partitions = [
        {"id": i, "kind": "R", "area": 100.0, "maxDensity": 1.0, "floor": 0, "bbox": [10 * i, 0, 10 * i + 10, 10]}
        for i in range(3)
    ]
    partitions[2].update(bbox=[0, 10, 20, 20], area=200.0)
    doors = [
        _door(0, 10.0, 5.0, _both(0, 1)),
        _door(1, 5.0, 10.0, _both(0, 2)),
        _door(2, 15.0, 10.0, [[2, 1]]),
    ]
    return {
        "partitions": partitions,
        "doors": doors,
        "initialPopulations": [[0, 3.0, 0], [1, 7.0, 0], [2, 5.0, 0]],
        "flowLambdas": [[0, 1, 0, 4.0], [1, 0, 0, 2.0], [0, 2, 1, 2.0], [2, 0, 1, 0.0], [2, 1, 2, 1.0]],
    }


def two_hallway_fixture() -> dict:
    rooms = []
    # (bbox, hallway, door position on the hallway wall)
    for k in range(6):
        x0 = 20 * k
        hall = 0 if k < 3 else 1
        rooms.append(([x0, 30, x0 + 20, 45], hall, (x0 + 10, 30)))
        rooms.append(([x0, 5, x0 + 20, 20], hall, (x0 + 10, 20)))
    # order R1..R12: top row then bottom row
    rooms = [rooms[2 * k] for k in range(6)] + [rooms[2 * k + 1] for k in range(6)]
    partitions = [
        {"id": 0, "kind": "R", "area": 600.0, "maxDensity": 1.0, "floor": 0, "bbox": [0, 20, 60, 30]},
        {"id": 1, "kind": "R", "area": 600.0, "maxDensity": 1.0, "floor": 0, "bbox": [60, 20, 120, 30]},
    ]
    for i, (bbox, _, _) in enumerate(rooms):
        partitions.append({"id": 2 + i, "kind": "R", "area": 300.0, "maxDensity": 1.0, "floor": 0, "bbox": bbox})
    connectors = [[0, 45, 40, 55], [40, 45, 80, 55], [80, 45, 120, 55], [0, -5, 80, 5]]
    for j, bbox in enumerate(connectors):
        area = (bbox[2] - bbox[0]) * (bbox[3] - bbox[1])
        partitions.append({"id": 14 + j, "kind": "R", "area": float(area), "maxDensity": 1.0, "floor": 0, "bbox": bbox})
    doors = [_door(0, 60.0, 25.0, _both(0, 1))]
    for i, (_, hall, (x, y)) in enumerate(rooms):
        doors.append(_door(len(doors), float(x), float(y), _both(hall, 2 + i)))
    # connector links: R13 joins R1-R2, R14 joins R3-R7 (R3 and R4 on top), R15 joins R5-R6, R16 joins R7-R10
    links = [(14, 2, 5.0), (14, 3, 25.0), (15, 4, 45.0), (15, 5, 65.0), (16, 6, 85.0), (16, 7, 105.0)]
    for conn, room, x in links:
        doors.append(_door(len(doors), x, 45.0, _both(room, conn)))
    for conn, room, x in [(17, 8, 5.0), (17, 9, 25.0)]:
        doors.append(_door(len(doors), x, 5.0, _both(room, conn)))
    return {
        "partitions": partitions,
        "doors": doors,
        "initialPopulations": [[p["id"], 0.0, 0] for p in partitions],
        "flowLambdas": [[a, b, d["id"], 0.0] for d in doors for a, b in d["directedPairs"]],
    }


def _write(name: str, document: dict) -> None:
    with open(DATA / f"{name}.json", "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=1)
        fh.write("\n")


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    _write("fig1", nine_partition_fixture())
    _write("fig1_fpq", nine_partition_query("fpq"))
    _write("fig1_lcpq", nine_partition_query("lcpq"))
    _write("fig4", three_partition_fixture())
    _write("appendix", two_hallway_fixture())


if __name__ == "__main__":
    main()
