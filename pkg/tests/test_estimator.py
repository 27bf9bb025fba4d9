from __future__ import annotations

import pytest

from conftest import fixture_document
from crowdroute.estimator import (
    EstimatorKind,
    NotDerivedError,
    NtConfig,
    Session,
    extrapolate_population,
    flow_difference_stats,
    rectify_outflows,
    step_population,
)
from crowdroute.model import load_model

# fig4 by hand, every door reports every 10 s:
#   t=10: room 0 wants 6 out of 3 -> scaled by 1/2; rooms become 2, 8, 5
#   t=20: room 0 wants 6 out of 2 -> scaled by 1/3; rooms become 2, 8 + 1/3, 4 + 2/3
FIG4_AT_20 = [2.0, 8.0 + 1.0 / 3.0, 4.0 + 2.0 / 3.0]


def test_rectify_keeps_feasible_outflows():
    assert rectify_outflows(10, (4, 2)) == [4, 2]
    assert rectify_outflows(0, (1, 1)) == [0.0, 0.0]
    with pytest.raises(ValueError):
        rectify_outflows(-1, (1,))


def test_step_population_refuses_unrectified_outflow():
    with pytest.raises(ValueError, match="rectify"):
        step_population(2, 3, 0)


def test_flow_difference_stats_population_sd():
    assert flow_difference_stats([1, 1, 1]) == (1.0, 0.0)
    assert flow_difference_stats([0, 2]) == (1.0, 1.0)
    with pytest.raises(ValueError):
        flow_difference_stats([])


def test_extrapolation_clamps_to_capacity():
    assert extrapolate_population(10, 1.0, 3, 100) == 13
    assert extrapolate_population(10, -5.0, 3, 100) == 0.0
    assert extrapolate_population(10, 50.0, 3, 100) == 100


@pytest.mark.parametrize("kind", ["local", "global"])
def test_fig4_second_step(fig4, kind):
    session = Session(fig4, kind)
    assert [session.population_at(v, 20) for v in range(3)] == pytest.approx(FIG4_AT_20, abs=1e-12)
    # populations hold between timestamps and times are floored
    assert [session.population_at(v, 29.9) for v in range(3)] == pytest.approx(FIG4_AT_20, abs=1e-12)
    assert [session.population_at(v, 9) for v in range(3)] == [3.0, 7.0, 5.0]


def test_local_overlay_records_rectified_flows(fig4):
    session = Session(fig4, EstimatorKind.LOCAL)
    session.population_local(1, 10)
    assert session.overlay[(fig4.edge_index[(0, 1, 0)], 10)] == 2.0
    assert session.overlay[(fig4.edge_index[(2, 1, 2)], 10)] == 1.0
    assert session.rectifications >= 1


def test_pp_uses_raw_inflow(fig4):
    pp = Session(fig4, EstimatorKind.PP)
    # inflow to room 1 is taken as the full 4 from room 0 and 1 from room 2
    assert pp.population_pp(1, 10) == 7 - 2 + 4 + 1
    assert pp.population_pp(0, 10) == 3 - 3 + 2


def test_nt_without_history_falls_back_to_pp(fig4):
    nt = Session(fig4, EstimatorKind.NT)
    pp = Session(fig4, EstimatorKind.PP)
    assert nt.flow_stats(0) is None
    assert [nt.population_at(v, 30) for v in range(3)] == [pp.population_at(v, 30) for v in range(3)]


def test_nt_uses_recent_history_window():
    doc = fixture_document("fig4")
    doc["initialPopulations"] = [[0, 3.0, 100], [1, 7.0, 100], [2, 5.0, 100]]
    # room 2 only has door 1 in and doors 1, 2 out; old samples are noisy, recent ones constant
    rows = []
    for t in range(10, 101, 10):
        rows.append([0, 2, 1, t, 9.0 if t <= 20 else 2.0])
        rows.append([2, 1, 2, t, 1.0])
    doc["flowHistory"] = rows
    model = load_model(doc)
    session = Session(model, EstimatorKind.NT, NtConfig(history_window=8))
    assert session.flow_stats(2) == (1.0, 0.0)
    assert session.population_nt(2, 130) == 5.0 + 3
    assert session.population_nt(2, 10_000) == 200.0
    wide = Session(model, EstimatorKind.NT, NtConfig(eta=0.5, history_window=10))
    mu, sigma = wide.flow_stats(2)
    assert sigma > 0.5
    assert wide.population_nt(2, 130) == Session(model, EstimatorKind.PP).population_pp(2, 130)


def test_nt_config_validation():
    with pytest.raises(ValueError):
        NtConfig(eta=-1)
    with pytest.raises(ValueError):
        NtConfig(history_window=0)


def test_density_never_derives(fig4):
    session = Session(fig4, EstimatorKind.LOCAL)
    assert session.density(0, 0) == 3.0 / 100
    with pytest.raises(NotDerivedError):
        session.density(0, 10)
    session.population_local(0, 10)
    assert session.density(0, 15) == 2.0 / 100
    g = Session(fig4, EstimatorKind.GLOBAL)
    with pytest.raises(NotDerivedError):
        g.density(1, 10)


def test_repeated_queries_are_idempotent(fig4):
    session = Session(fig4, EstimatorKind.LOCAL)
    first = session.population_local(1, 40)
    entries = session.memory_entries
    calls = session.derivation_calls
    assert session.population_local(1, 40) == first
    assert session.memory_entries == entries
    assert session.derivation_calls == calls


def test_ledger_rows_cover_derived_timestamps(fig4):
    session = Session(fig4, EstimatorKind.GLOBAL)
    session.population_global(20)
    rows = session.ledger_rows()
    assert {(v, t) for v, t, _ in rows} == {(v, t) for v in range(3) for t in (0, 10, 20)}
    assert [p for v, t, p in rows if t == 20] == pytest.approx(FIG4_AT_20)
