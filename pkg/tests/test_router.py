from __future__ import annotations

import math

import numpy as np
import pytest

import oracles
from conftest import fixture_document
from crowdroute.estimator import EstimatorKind, Session
from crowdroute.model import IndoorPoint, ModelError, Path, load_model, to_gtg
from crowdroute.router import (
    CostVector,
    QueryType,
    RoutingConfig,
    distance_dijkstra,
    replay_path,
    search,
    search_adaptive,
    search_gtg,
    segment_cost,
)
from crowdroute.simgen import generate_random_model
from crowdroute.simgen.space import random_point

FIG1_SPEED = RoutingConfig(speed=1.25)


@pytest.fixture(scope="module")
def fig1_query(fig1):
    q = fixture_document("fig1_fpq")
    return IndoorPoint(**q["source"]), IndoorPoint(**q["target"])


def _route(fig1, ps, pt, doors):
    parts = next(p for d, p in oracles.door_sequences(fig1, ps, pt) if d == doors)
    return Path(ps, doors, pt, parts)


def test_fig1_fastest_path(fig1, fig1_query):
    ps, pt = fig1_query
    result = search(fig1, ps, pt, 0, "fpq", FIG1_SPEED)
    assert result.path.doors == (0, 3, 6, 8)
    assert result.totals.time == pytest.approx(78.0, abs=1e-9)
    assert result.totals.distance == pytest.approx(48.0, abs=1e-9)


def test_fig1_least_crowded_path(fig1, fig1_query):
    ps, pt = fig1_query
    result = search(fig1, ps, pt, 0, "lcpq", FIG1_SPEED)
    assert result.path.doors == (0, 2, 5)
    assert result.totals.contact == pytest.approx(3.0, abs=1e-9)
    assert result.totals.time == pytest.approx(96.0, abs=1e-9)
    assert result.totals.distance == pytest.approx(35.0, abs=1e-9)


def test_fig1_shortest_path_is_crowded(fig1, fig1_query):
    ps, pt = fig1_query
    dist, doors = distance_dijkstra(fig1, ps, pt)
    assert dist == pytest.approx(32.0)
    _, total = replay_path(fig1, Session(fig1), _route(fig1, ps, pt, doors), 0, "lcpq", FIG1_SPEED)
    assert total.contact == pytest.approx(18.0, abs=1e-9)
    # 91.06 s rather than 144 s: see the fixture notes in the decision log
    assert total.time == pytest.approx(91.06, abs=0.01)
    _, fastest = replay_path(fig1, Session(fig1), _route(fig1, ps, pt, (0, 3, 6, 8)), 0, "lcpq", FIG1_SPEED)
    assert fastest.contact == pytest.approx(5.0, abs=1e-9)


def test_replay_matches_search_totals(fig1, fig1_query):
    ps, pt = fig1_query
    for qt in ("fpq", "lcpq"):
        result = search(fig1, ps, pt, 0, qt, FIG1_SPEED)
        segs, total = replay_path(fig1, Session(fig1), result.path, 0, qt, FIG1_SPEED)
        assert total == result.totals
        assert tuple(segs) == result.path.segment_costs


def test_same_partition_query(fig4):
    ps, pt = IndoorPoint(0, 1.0, 1.0), IndoorPoint(0, 4.0, 5.0)
    result = search(fig4, ps, pt, 0, "fpq")
    assert result.path.doors == ()
    density = 3 / 100
    assert result.totals.time == pytest.approx(5.0 / 1.2 * (1 + math.exp(density**2)))


def test_one_way_door_blocks_return(fig4):
    # room 1 to room 2 needs door 2 backwards or a trip through room 0
    ps, pt = IndoorPoint(1, 15.0, 5.0), IndoorPoint(2, 15.0, 15.0)
    result = search(fig4, ps, pt, 0, "fpq")
    assert result.path.doors == (0, 1)
    assert result.path.partitions == (1, 0, 2)


def test_unreachable_target():
    doc = fixture_document("fig4")
    doc["doors"][2]["directedPairs"] = [[1, 2]]
    doc["doors"][1]["directedPairs"] = [[2, 0]]
    doc["doors"][0]["directedPairs"] = [[1, 0]]
    doc["flowLambdas"] = []
    model = load_model(doc)
    result = search(model, IndoorPoint(0, 5.0, 5.0), IndoorPoint(2, 5.0, 15.0), 0, "fpq")
    assert not result.found and result.totals is None
    assert result.to_dict()["found"] is False


def test_bad_endpoint_rejected(fig4):
    with pytest.raises(ModelError):
        search(fig4, IndoorPoint(0, 50.0, 5.0), IndoorPoint(1, 15.0, 5.0), 0, "fpq")


def test_config_validation():
    with pytest.raises(ValueError):
        RoutingConfig(speed=0)
    with pytest.raises(ValueError):
        RoutingConfig(buffer_width=-1)


def test_cost_vector_ordering():
    a = CostVector(10.0, 5.0, 2.0)
    b = CostVector(8.0, 5.0, 3.0)
    assert a.key(QueryType.FPQ) > b.key(QueryType.FPQ)
    assert a.key(QueryType.LCPQ) < b.key(QueryType.LCPQ)
    assert (a + b).contact == 5.0
    assert (CostVector(1, 1) + CostVector(2, 2)).contact is None


def test_segment_cost_fpq_has_no_contact(fig4):
    seg = segment_cost(fig4.partitions[0], 12.0, 0.0, QueryType.FPQ, RoutingConfig())
    assert seg == CostVector(12.0, 20.0, None)


@pytest.mark.parametrize("kind", list(EstimatorKind))
def test_every_estimator_answers(fig1, fig1_query, kind):
    ps, pt = fig1_query
    cfg = RoutingConfig(speed=1.25, estimator=kind)
    result = search(fig1, ps, pt, 0, "fpq", cfg)
    # the fixture has no flows, so every estimator sees the same populations
    assert result.path.doors == (0, 3, 6, 8)
    assert result.memory_entries >= 0


def test_gtg_agrees_and_examines_more(fig1, fig1_query):
    ps, pt = fig1_query
    gtg = to_gtg(fig1)
    for qt in ("fpq", "lcpq"):
        a = search(fig1, ps, pt, 0, qt, FIG1_SPEED)
        b = search_gtg(gtg, ps, pt, 0, qt, FIG1_SPEED)
        assert b.totals == a.totals
        assert b.path.doors == a.path.doors
        assert b.relaxations >= a.relaxations
        assert b.memory_entries > a.memory_entries


def test_adaptive_static_world_follows_plan(fig1, fig1_query):
    ps, pt = fig1_query
    planned = search(fig1, ps, pt, 0, "fpq", FIG1_SPEED)
    adaptive = search_adaptive(fig1, ps, pt, 0, "fpq", FIG1_SPEED)
    assert adaptive.path.doors == planned.path.doors
    assert adaptive.totals.time == pytest.approx(planned.totals.time)


def test_adaptive_totals_replay_on_random_models():
    for seed in range(10):
        model = generate_random_model(900 + seed, 8)
        rng = np.random.default_rng(seed)
        ps = random_point(model, 0, rng)
        pt = random_point(model, model.n_partitions - 1, rng)
        result = search_adaptive(model, ps, pt, 3, "fpq")
        if not result.found:
            continue
        _, total = replay_path(model, Session(model), result.path, 3, "fpq")
        assert total.time == pytest.approx(result.totals.time, rel=1e-12)


def test_result_dict_keys(fig1, fig1_query):
    ps, pt = fig1_query
    out = search(fig1, ps, pt, 0, "lcpq", FIG1_SPEED).to_dict()
    assert out["doors"] == [0, 2, 5]
    assert set(out["totals"]) == {"distance", "time", "contact"}
    assert len(out["segments"]) == len(out["partitions"]) == 4
    for key in ("expandedNodes", "relaxations", "derivationCalls", "wallTimeMs", "ledgerEntries"):
        assert key in out
