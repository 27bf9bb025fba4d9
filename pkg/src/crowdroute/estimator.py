"""Population derivation over time: exact global/local estimators and the PP/NT shortcuts.

All estimators share the same step: at an update timestamp ``tau`` a partition's
expected outflows are rectified against its population just before ``tau``, and
the new population is ``P - out + in``.  The exact estimators use rectified
upstream outflows as inflow; PP uses raw upstream rates; NT extrapolates the
historical mean flow difference when it is stable enough.
"""

from __future__ import annotations

import math
import statistics
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .model import IndoorCrowdModel

# New update timestamps are materialised in chunks of this many seconds.
_HORIZON_CHUNK = 600


class EstimatorKind(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"
    PP = "pp"
    NT = "nt"


@dataclass(frozen=True)
class NtConfig:
    eta: float = 3.0
    history_window: int = 20

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.history_window <= 0:
            raise ValueError("history window must be positive")


class NotDerivedError(RuntimeError):
    """A lookup hit a timestamp the session has not derived yet."""


def rectify_outflows(population: float, outflows: Sequence[float]) -> list[float]:
    """Scale expected outflows down so that they never exceed ``population``."""
    if population < 0 or any(f < 0 for f in outflows):
        raise ValueError("negative population or outflow")
    total = 0.0
    for f in outflows:
        total += f
    if total <= population:
        return list(outflows)
    scale = population / total
    return [f * scale for f in outflows]


def step_population(p_prev: float, out: float, inflow: float) -> float:
    if out > p_prev * (1 + 1e-12) + 1e-12:
        raise ValueError(f"outflow {out} exceeds population {p_prev}; rectify first")
    return max(0.0, (p_prev - out) + inflow)


def flow_difference_stats(diffs: Sequence[float]) -> tuple[float, float]:
    """Mean and population (divide by N) standard deviation."""
    if not diffs:
        raise ValueError("no flow differences")
    return statistics.fmean(diffs), statistics.pstdev(diffs)


def extrapolate_population(p_last: float, mu: float, skipped: int, capacity: float) -> float:
    return min(max(p_last + mu * skipped, 0.0), capacity)


class _Topology:
    """Flat per-model arrays shared by every session."""

    def __init__(self, model: IndoorCrowdModel) -> None:
        self.period = [d.report_period for d in model.doors]
        self.origin = [d.report_origin for d in model.doors]
        self.part_doors = [p.doors for p in model.partitions]
        # only edges that can carry flow matter for the derivation
        self.outs: list[tuple[tuple[int, int, int, float], ...]] = []
        self.ins: list[tuple[tuple[int, int, int, int, float], ...]] = []
        for v in range(model.n_partitions):
            self.outs.append(
                tuple(
                    (e.index, self.period[e.door], self.origin[e.door], e.lam)
                    for e in (model.edges[i] for i in model.out_edges[v])
                    if e.lam > 0
                )
            )
            self.ins.append(
                tuple(
                    (e.index, self.period[e.door], self.origin[e.door], e.source, e.lam)
                    for e in (model.edges[i] for i in model.in_edges[v])
                    if e.lam > 0
                )
            )
        self.src = np.array([e.source for e in model.edges], dtype=np.int64)
        self.dst = np.array([e.target for e in model.edges], dtype=np.int64)
        self.lam = np.array([e.lam for e in model.edges], dtype=np.float64)
        self.edge_period = np.array([self.period[e.door] for e in model.edges], dtype=np.int64)
        self.edge_origin = np.array([self.origin[e.door] for e in model.edges], dtype=np.int64)
        self.initial = np.array([p for p, _ in model.initial], dtype=np.float64)
        self.capacity = [p.capacity for p in model.partitions]
        # reporting patterns repeat with the lcm of a partition's door periods
        self.cycle: list[int] = []
        self.settled: list[int] = []
        for v in range(model.n_partitions):
            doors = self.part_doors[v]
            self.cycle.append(math.lcm(*(self.period[d] for d in doors)) if doors else 1)
            self.settled.append(max((self.origin[d] for d in doors), default=0))
        self.phases: dict[tuple[int, int], tuple[tuple[tuple[int, float], ...], tuple[tuple[int, int, float], ...]]] = {}
        self.stats: dict[tuple[int, int], tuple[float, float] | None] = {}

    @classmethod
    def of(cls, model: IndoorCrowdModel) -> _Topology:
        topo = model.__dict__.get("_topology")
        if topo is None:
            topo = cls(model)
            model.__dict__["_topology"] = topo
        return topo


def _reports(t: int, period: int, origin: int) -> bool:
    return t >= origin and (t - origin) % period == 0


_Phase = tuple[tuple[tuple[int, float], ...], tuple[tuple[int, int, float], ...]]


def _phase(topo: _Topology, v: int, tau: int) -> _Phase:
    """Edges of v reporting at tau: ((edge, lam) out, (edge, source, lam) in)."""
    cycle = topo.cycle[v]
    key = (v, tau % cycle)
    cacheable = tau >= topo.settled[v] and cycle <= 100_000
    if cacheable:
        hit = topo.phases.get(key)
        if hit is not None:
            return hit
    phase = (
        tuple((ei, lam) for ei, period, origin, lam in topo.outs[v] if _reports(tau, period, origin)),
        tuple((ei, src, lam) for ei, period, origin, src, lam in topo.ins[v] if _reports(tau, period, origin)),
    )
    if cacheable:
        topo.phases[key] = phase
    return phase


class Session:
    """Per-query mutable state: population ledgers and rectified-flow overlays.

    ``population_at(v, t)`` is the entry point used by the router; it derives
    whatever the configured estimator needs and returns the population over
    the unit interval covering ``t``.
    """

    def __init__(
        self,
        model: IndoorCrowdModel,
        kind: EstimatorKind | str = EstimatorKind.LOCAL,
        nt: NtConfig | None = None,
    ) -> None:
        self.model = model
        self.kind = EstimatorKind(kind)
        self.nt = nt or NtConfig()
        self.topo = _Topology.of(model)
        self.t0 = model.start_time
        n = model.n_partitions
        # update timestamps after t0, materialised lazily per partition
        self._ut: list[list[int]] = [[] for _ in range(n)]
        self._ut_h: list[int] = [self.t0] * n
        # exact-local ledger: _pops[v][k] is the population after the first k update timestamps
        self._pops: list[list[float] | None] = [None] * n
        # every update timestamp of v up to _done[v] is in the ledger
        self._done: list[int] = [self.t0] * n
        self.overlay: dict[tuple[int, int], float] = {}
        self._rectified: dict[tuple[int, int], float] = {}
        # global ledger
        self._g_times: list[int] = []
        self._g_pops: list[np.ndarray] = []
        self._g_flows: list[np.ndarray] = []
        self._g_h = self.t0
        # PP ledger and overlay
        self._pp: list[list[float] | None] = [None] * n
        self.pp_overlay: dict[tuple[int, int], float] = {}
        # NT ledger keyed by (partition, covering update timestamp)
        self.nt_ledger: dict[tuple[int, int], float] = {}
        self.derivation_calls = 0
        self.derivation_steps = 0
        self.rectifications = 0

    # -- shared helpers -----------------------------------------------------

    def _extend_ut(self, v: int, t: int) -> list[int]:
        uts = self._ut[v]
        h = self._ut_h[v]
        if t <= h:
            return uts
        new_h = max(t, h + _HORIZON_CHUNK)
        stamps: set[int] = set()
        topo = self.topo
        for d in topo.part_doors[v]:
            period, origin = topo.period[d], topo.origin[d]
            n = max(0, (h - origin) // period + 1)
            stamps.update(range(origin + n * period, new_h + 1, period))
        uts.extend(sorted(stamps))
        self._ut_h[v] = new_h
        return uts

    def update_timestamps_after_start(self, v: int, t: int) -> list[int]:
        """v's update timestamps in (t0, t]."""
        uts = self._extend_ut(v, t)
        return uts[: bisect_right(uts, t)]

    def _ledger(self, v: int) -> list[float]:
        pops = self._pops[v]
        if pops is None:
            pops = self._pops[v] = [self.model.initial[v][0]]
        return pops

    # -- exact local --------------------------------------------------------

    def _rectify(self, w: int, tau: int) -> float:
        """Rectified outflows of ``w`` at ``tau`` into the overlay; returns their sum."""
        pops = self._ledger(w)
        p = pops[bisect_right(self._ut[w], tau - 1, 0, len(pops) - 1)]
        edges = _phase(self.topo, w, tau)[0]
        total = 0.0
        for _, lam in edges:
            total += lam
        overlay = self.overlay
        if total > p:
            scale = p / total
            for ei, lam in edges:
                overlay[(ei, tau)] = lam * scale
            total = p
            self.rectifications += 1
        else:
            for ei, lam in edges:
                overlay[(ei, tau)] = lam
        self._rectified[(w, tau)] = total
        return total

    def _derive_local(self, v: int, t: int) -> None:
        """Derive v through every update timestamp <= t, pulling upstream partitions as needed."""
        done = self._done
        if done[v] >= t:
            return
        topo = self.topo
        rectified = self._rectified
        overlay = self.overlay
        stack = [(v, t)]
        worked = False
        while stack:
            u, target = stack[-1]
            if done[u] >= target:
                stack.pop()
                continue
            pops = self._ledger(u)
            uts = self._extend_ut(u, target)
            k = len(pops) - 1
            if k >= len(uts) or uts[k] > target:
                done[u] = target
                stack.pop()
                continue
            tau = uts[k]
            ins = _phase(topo, u, tau)[1]
            # upstream partitions must be known just before tau to rectify their outflows
            pending = False
            for _, src, _ in ins:
                if done[src] < tau - 1 and (src, tau) not in rectified:
                    stack.append((src, tau - 1))
                    pending = True
            if pending:
                continue
            inflow = 0.0
            for ei, src, _ in ins:
                f = overlay.get((ei, tau))
                if f is None:
                    self._rectify(src, tau)
                    f = overlay[(ei, tau)]
                inflow += f
            out = rectified.get((u, tau))
            if out is None:
                out = self._rectify(u, tau)
            pops.append(max(0.0, (pops[-1] - out) + inflow))
            done[u] = tau
            self.derivation_steps += 1
            worked = True
        if worked:
            self.derivation_calls += 1

    def population_local(self, v: int, t_a: int) -> float:
        t_a = int(math.floor(t_a))
        self._derive_local(v, t_a)
        pops = self._ledger(v)
        return pops[bisect_right(self._ut[v], t_a, 0, len(pops) - 1)]

    # -- exact global ---------------------------------------------------------

    def population_global(self, t_a: int) -> np.ndarray:
        """Derive every partition through every model update timestamp <= t_a."""
        t_a = int(math.floor(t_a))
        topo = self.topo
        if not self._g_times:
            self._g_times.append(self.t0)
            self._g_pops.append(topo.initial.copy())
        if t_a > self._g_h:
            stamps: set[int] = set()
            h = self._g_h
            for period, origin in zip(topo.period, topo.origin):
                n = max(0, (h - origin) // period + 1)
                stamps.update(range(origin + n * period, t_a + 1, period))
            p = self._g_pops[-1]
            n_parts = len(p)
            for tau in sorted(stamps):
                mask = (tau >= topo.edge_origin) & ((tau - topo.edge_origin) % topo.edge_period == 0)
                expected = np.where(mask, topo.lam, 0.0)
                out_sum = np.bincount(topo.src, weights=expected, minlength=n_parts)
                short = out_sum > p
                scale = np.ones(n_parts)
                scale[short] = p[short] / out_sum[short]
                flows = expected * scale[topo.src]
                out = np.where(short, p, out_sum)
                inflow = np.bincount(topo.dst, weights=flows, minlength=n_parts)
                p = np.maximum((p - out) + inflow, 0.0)
                self._g_times.append(tau)
                self._g_pops.append(p)
                self._g_flows.append(flows)
                self.rectifications += int(short.sum())
                self.derivation_steps += 1
            self._g_h = t_a
            if stamps:
                self.derivation_calls += 1
        return self._g_pops[bisect_right(self._g_times, t_a) - 1]

    def global_flow(self, edge: int, tau: int) -> float:
        i = bisect_right(self._g_times, tau) - 1
        if i <= 0 or self._g_times[i] != tau:
            return 0.0
        return float(self._g_flows[i - 1][edge])

    # -- strategy PP ----------------------------------------------------------

    def population_pp(self, v: int, t_a: int) -> float:
        t_a = int(math.floor(t_a))
        pops = self._pp[v]
        if pops is None:
            pops = self._pp[v] = [self.model.initial[v][0]]
        uts = self._extend_ut(v, t_a)
        k = len(pops) - 1
        if k < len(uts) and uts[k] <= t_a:
            topo = self.topo
            overlay = self.pp_overlay
            p = pops[-1]
            while k < len(uts) and uts[k] <= t_a:
                tau = uts[k]
                edges, ins = _phase(topo, v, tau)
                total = 0.0
                for _, lam in edges:
                    total += lam
                if total > p:
                    scale = p / total
                    for ei, lam in edges:
                        overlay[(ei, tau)] = lam * scale
                    total = p
                    self.rectifications += 1
                else:
                    for ei, lam in edges:
                        overlay[(ei, tau)] = lam
                inflow = 0.0
                for _, _, lam in ins:
                    inflow += lam
                p = max(0.0, (p - total) + inflow)
                pops.append(p)
                k += 1
                self.derivation_steps += 1
            self.derivation_calls += 1
        return pops[bisect_right(uts, t_a, 0, len(pops) - 1)]

    # -- strategy NT ----------------------------------------------------------

    def flow_stats(self, v: int) -> tuple[float, float] | None:
        """(mu, sigma) of v's historical inflow-outflow differences, or None without history."""
        cache = self.topo.stats
        key = (v, self.nt.history_window)
        if key not in cache:
            cache[key] = self._compute_flow_stats(v)
        return cache[key]

    def _compute_flow_stats(self, v: int) -> tuple[float, float] | None:
        model = self.model
        by_edge = model.__dict__.get("_history_by_edge")
        if by_edge is None:
            by_edge = {}
            for h in model.history:
                by_edge.setdefault(h.edge, {})[h.timestamp] = h.flow
            model.__dict__["_history_by_edge"] = by_edge
        ins = [by_edge[e] for e in model.in_edges[v] if e in by_edge]
        outs = [by_edge[e] for e in model.out_edges[v] if e in by_edge]
        if not ins and not outs:
            return None
        start = min(min(h) for h in ins + outs)
        stamps: set[int] = set()
        for d in self.topo.part_doors[v]:
            period, origin = self.topo.period[d], self.topo.origin[d]
            n = max(0, -((origin - start) // period))
            stamps.update(range(origin + n * period, self.t0 + 1, period))
        recent = sorted(stamps)[-self.nt.history_window :]
        if not recent:
            return None
        diffs = [
            math.fsum(h.get(t, 0.0) for h in ins) - math.fsum(h.get(t, 0.0) for h in outs) for t in recent
        ]
        return flow_difference_stats(diffs)

    def population_nt(self, v: int, t_a: int, cfg: NtConfig | None = None) -> float:
        cfg = cfg or self.nt
        t_a = int(math.floor(t_a))
        stats = self.flow_stats(v)
        if stats is None or not stats[1] < cfg.eta:
            return self.population_pp(v, t_a)
        uts = self._extend_ut(v, t_a)
        skipped = bisect_right(uts, t_a)
        key = (v, uts[skipped - 1] if skipped else self.t0)
        value = self.nt_ledger.get(key)
        if value is None:
            value = extrapolate_population(self.model.initial[v][0], stats[0], skipped, self.topo.capacity[v])
            self.nt_ledger[key] = value
            self.derivation_calls += 1
        return value

    # -- router-facing --------------------------------------------------------

    def population_at(self, v: int, t: float) -> float:
        kind = self.kind
        ti = int(math.floor(t))
        if kind is EstimatorKind.LOCAL:
            return self.population_local(v, ti)
        if kind is EstimatorKind.GLOBAL:
            return float(self.population_global(ti)[v])
        if kind is EstimatorKind.PP:
            return self.population_pp(v, ti)
        return self.population_nt(v, ti)

    def density(self, v: int, t: float) -> float:
        """Population over the unit interval covering ``t`` divided by area; never derives."""
        ti = int(math.floor(t))
        area = self.model.partitions[v].area
        if ti <= self.t0:
            return self.model.initial[v][0] / area
        kind = self.kind
        if kind is EstimatorKind.GLOBAL:
            if ti > self._g_h or not self._g_times:
                raise NotDerivedError(f"global ledger not derived through {ti}")
            return float(self._g_pops[bisect_right(self._g_times, ti) - 1][v]) / area
        if kind is EstimatorKind.NT:
            stats = self.flow_stats(v)
            if stats is not None and stats[1] < self.nt.eta:
                uts = self._ut[v]
                if ti > self._ut_h[v]:
                    raise NotDerivedError(f"partition {v} not derived through {ti}")
                i = bisect_right(uts, ti)
                key = (v, uts[i - 1] if i else self.t0)
                if key not in self.nt_ledger:
                    raise NotDerivedError(f"partition {v} not derived through {ti}")
                return self.nt_ledger[key] / area
        pops = self._pops[v] if kind is EstimatorKind.LOCAL else self._pp[v]
        uts = self._ut[v]
        if pops is None or ti > self._ut_h[v]:
            raise NotDerivedError(f"partition {v} not derived through {ti}")
        k = len(pops) - 1
        if k < len(uts) and uts[k] <= ti:
            raise NotDerivedError(f"partition {v} not derived through {ti}")
        return pops[bisect_right(uts, ti, 0, k)] / area

    @property
    def memory_entries(self) -> int:
        """Ledger plus overlay entry count, the structural memory proxy."""
        total = len(self.overlay) + len(self.pp_overlay) + len(self.nt_ledger)
        total += sum(len(p) for p in self._pops if p is not None)
        total += sum(len(p) for p in self._pp if p is not None)
        if self._g_times:
            total += len(self._g_times) * self.model.n_partitions + len(self._g_flows) * len(self.model.edges)
        return total

    def ledger_rows(self) -> list[tuple[int, int, float]]:
        """``(partition, timestamp, population)`` rows of the configured estimator's ledger."""
        model = self.model
        rows: list[tuple[int, int, float]] = []
        if self.kind is EstimatorKind.GLOBAL:
            for i, (t, pops) in enumerate(zip(self._g_times, self._g_pops)):
                for v in range(model.n_partitions):
                    rows.append((v, model.initial[v][1] if i == 0 else t, float(pops[v])))
            return rows
        if self.kind is EstimatorKind.NT:
            for (v, t), value in sorted(self.nt_ledger.items()):
                rows.append((v, t, value))
        ledgers = self._pops if self.kind is EstimatorKind.LOCAL else self._pp
        for v, pops in enumerate(ledgers):
            if pops is None:
                continue
            rows.append((v, model.initial[v][1], pops[0]))
            rows.extend((v, t, p) for t, p in zip(self._ut[v], pops[1:]))
        rows.sort(key=lambda r: (r[1], r[0]))
        return rows
