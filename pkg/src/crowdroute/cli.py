"""Command-line entry point: generate, fit, estimate, query, simulate and benchmark."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path as FsPath
from typing import Any, Sequence

from .estimator import EstimatorKind, NtConfig, Session
from .flows import (
    FlowHistory,
    InsufficientDataError,
    fit_lambda,
    ingest_trajectories,
    read_flow_history_csv,
    read_trajectories_csv,
    write_flow_history_csv,
    write_trajectories_csv,
)
from .model import IndoorCrowdModel, ModelError, read_model, to_gtg, with_lambdas, write_model
from .router import QueryResult, QueryType, RoutingConfig, search, search_gtg
from .simgen.bench import ALGORITHMS, report_rows, run_algorithms, write_report
from .simgen.simulate import SimulationHorizonError, gold_search, query_horizon, simulate
from .simgen.space import QueryInstance, SpaceSpec, SpecError, WorkloadSpec, generate_space, generate_workload, spec_from_dict, spec_to_dict

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NO_PATH = 3
EXIT_IO = 4

log = logging.getLogger("crowdroute")


class CliError(Exception):
    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.code = code


# -- helpers ------------------------------------------------------------------


def _read_json(path: str) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: malformed JSON: {exc}", EXIT_VALIDATION) from exc


def _write_json(data: Any, path: FsPath) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _model(args: argparse.Namespace) -> IndoorCrowdModel:
    if not args.model:
        raise CliError("--model is required", EXIT_VALIDATION)
    try:
        return read_model(args.model)
    except json.JSONDecodeError as exc:
        raise CliError(f"{args.model}: malformed JSON: {exc}", EXIT_VALIDATION) from exc


def _config(args: argparse.Namespace, overrides: dict[str, Any] | None = None) -> RoutingConfig:
    overrides = overrides or {}
    speed = overrides.get("speed", args.speed)
    estimator = overrides.get("estimator", args.estimator)
    return RoutingConfig(speed=float(speed), estimator=EstimatorKind(estimator), nt=NtConfig(eta=args.eta))


def _out_dir(args: argparse.Namespace) -> FsPath:
    out = FsPath(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(data: Any, args: argparse.Namespace) -> None:
    text = json.dumps(data, indent=1, sort_keys=True)
    if args.out:
        FsPath(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _query_request(model: IndoorCrowdModel, path: str) -> tuple[QueryInstance, QueryType, dict[str, Any]]:
    request = _read_json(path)
    if not isinstance(request, dict):
        raise CliError("query request must be a JSON object", EXIT_VALIDATION)
    try:
        qt = QueryType(request.get("type", "fpq"))
        instance = QueryInstance.from_dict(model, request)
    except (KeyError, TypeError) as exc:
        raise CliError(f"query request is missing a field: {exc}", EXIT_VALIDATION) from exc
    overrides = {k: request[k] for k in ("speed", "estimator") if k in request}
    return instance, qt, overrides


def _print_result(result: QueryResult) -> int:
    print(json.dumps(result.to_dict(), indent=1, sort_keys=True))
    return EXIT_OK if result.found else EXIT_NO_PATH


def _read_workload(model: IndoorCrowdModel, path: str) -> tuple[WorkloadSpec | None, list[QueryInstance]]:
    data = _read_json(path)
    spec = spec_from_dict(WorkloadSpec, data["spec"]) if data.get("spec") else None
    return spec, [QueryInstance.from_dict(model, item) for item in data["instances"]]


# -- commands -----------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    space = spec_from_dict(SpaceSpec, _read_json(args.space)) if args.space else SpaceSpec()
    workload = spec_from_dict(WorkloadSpec, _read_json(args.workload)) if args.workload else WorkloadSpec()
    if args.seed is not None:
        space = SpaceSpec(**{**spec_to_dict(space), "seed": args.seed})
        workload = spec_from_dict(WorkloadSpec, {**spec_to_dict(workload), "seed": args.seed})
    space.validate(on_grid=True)
    workload.validate(on_grid=True)
    out = _out_dir(args)
    model, metadata = generate_space(space, workload)
    instances = generate_workload(model, workload)
    write_model(model, out / "model.json")
    _write_json({"spec": spec_to_dict(workload), "instances": [i.to_dict() for i in instances]}, out / "workload.json")
    _write_json(metadata, out / "metadata.json")
    log.info("wrote %d partitions, %d doors, %d instances to %s", model.n_partitions, len(model.doors), len(instances), out)
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    model = _model(args)
    if bool(args.history) == bool(args.trajectories):
        raise CliError("give exactly one of --history or --trajectories", EXIT_VALIDATION)
    if args.history:
        histories = read_flow_history_csv(args.history)
    else:
        trajectories = read_trajectories_csv(model, args.trajectories)
        histories, report = ingest_trajectories(model, trajectories, args.sample_period)
        log.info("ingested %d hops (%d uncertain, %d unmatched)", report.hops, report.uncertain_hops, report.unmatched_hops)
    lambdas: dict[tuple[int, int, int], float] = {}
    for key, hist in histories.items():
        if key not in model.edge_index:
            raise CliError(f"flow history names unknown edge {key}", EXIT_VALIDATION)
        try:
            lambdas[key] = fit_lambda(hist, args.window)
        except InsufficientDataError:
            log.warning("edge %s has no samples; keeping its rate", key)
    fitted = with_lambdas(model, lambdas)
    if args.out:
        write_model(fitted, args.out)
    else:
        print(json.dumps({f"{a},{b},{d}": lam for (a, b, d), lam in sorted(lambdas.items())}, indent=1))
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    model = _model(args)
    cfg = _config(args)
    session = Session(model, cfg.estimator, cfg.nt)
    partitions = args.partition if args.partition else range(model.n_partitions)
    for v in partitions:
        if not 0 <= v < model.n_partitions:
            raise CliError(f"unknown partition {v}", EXIT_VALIDATION)
        session.population_at(v, args.time)
    rows = session.ledger_rows()
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(("partitionId", "timestamp", "population"))
        writer.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    model = _model(args)
    instance, qt, overrides = _query_request(model, args.query)
    cfg = _config(args, overrides)
    return _print_result(search(model, instance.source, instance.target, instance.time, qt, cfg))


def cmd_gtg(args: argparse.Namespace) -> int:
    model = _model(args)
    gtg = to_gtg(model)
    if not args.query:
        _emit(
            {
                "partitions": model.n_partitions,
                "connections": model.connection_count(),
                "directedEdges": len(model.edges),
                "gtgVertices": gtg.vertex_count,
                "gtgEdges": gtg.undirected_edge_count(),
                "gtgDirectedEdges": gtg.edge_count,
            },
            args,
        )
        return EXIT_OK
    instance, qt, overrides = _query_request(model, args.query)
    cfg = _config(args, overrides)
    return _print_result(search_gtg(gtg, instance.source, instance.target, instance.time, qt, cfg))


def cmd_sim(args: argparse.Namespace) -> int:
    model = _model(args)
    if args.seed is None:
        raise CliError("--seed is required for simulation", EXIT_VALIDATION)
    out = _out_dir(args)
    sim = simulate(model, args.horizon, args.seed, speed=args.speed, record_trajectories=True, drop_rate=args.drop_rate)
    write_trajectories_csv(sim.trajectories, out / "trajectories.csv")
    histories = []
    for e in model.edges:
        door = model.doors[e.door]
        series = [(t, float(sim.flows[e.index].get(t, 0))) for t in sim.report_times if door.reports_at(t)]
        histories.append(FlowHistory((e.source, e.target, e.door), series))
    write_flow_history_csv(histories, out / "flows.csv")
    with open(out / "populations.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("partitionId", "timestamp", "population"))
        for v in range(model.n_partitions):
            writer.writerows((v, t, c) for t, c in zip(sim.count_times[v], sim.count_values[v]))
    log.info("simulated %d objects to t=%d; %d blocked exits", len(sim.objects), args.horizon, sim.blocked_exits)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    if args.seed is None:
        raise CliError("--seed is mandatory in bench mode", EXIT_VALIDATION)
    model = _model(args)
    spec, instances = _read_workload(model, args.workload)
    if args.instances is not None:
        instances = instances[: args.instances]
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    unknown = sorted(set(algorithms) - set(ALGORITHMS))
    if unknown:
        raise CliError(f"unknown algorithms {unknown}; choose from {', '.join(ALGORITHMS)}", EXIT_VALIDATION)
    cfg = _config(args)
    qt = QueryType(args.type)
    golds = None
    if not args.no_gold and instances:
        sim = simulate(model, max(query_horizon(instances, cfg.speed), model.start_time + 1), args.seed, speed=cfg.speed)
        golds = [gold_search(sim, inst, qt, cfg) for inst in instances]
    runs = run_algorithms(model, instances, algorithms, qt, cfg, args.repeats)
    parameter, _, value = args.parameter.partition("=")
    if not value and spec is not None:
        value = str(spec_to_dict(spec).get(parameter, ""))
    rows, metrics = report_rows(runs, golds, qt, parameter, value, args.repeats)
    out = FsPath(args.out or "bench.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(rows, out)
    if args.metrics_dir:
        metrics_dir = FsPath(args.metrics_dir)
        metrics_dir.mkdir(parents=True, exist_ok=True)
        for name, m in metrics.items():
            m.write_csv(metrics_dir / f"{name}.csv")
    for row in rows:
        log.info("%s: %.1f ms, %d entries", row.algorithm, row.wall_time_ms, row.peak_ledger_entries)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model JSON file")
    common.add_argument("--seed", type=int, help="random seed (mandatory for bench and sim)")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--estimator", choices=[k.value for k in EstimatorKind], default=EstimatorKind.LOCAL.value)
    common.add_argument("--eta", type=float, default=NtConfig().eta, help="NT flow-difference threshold")
    common.add_argument("--speed", type=float, default=RoutingConfig().speed, help="average walking speed, m/s")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="crowdroute", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic space and query workload")
    p.add_argument("--space", help="space spec JSON")
    p.add_argument("--workload", help="workload spec JSON")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", parents=[common], help="fit door flow rates from history or trajectories")
    p.add_argument("--history", help="flow history CSV")
    p.add_argument("--trajectories", help="trajectory CSV")
    p.add_argument("--window", type=int, default=50, help="most recent samples used per edge")
    p.add_argument("--sample-period", type=int, default=10, help="seconds per flow sample")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("estimate", parents=[common], help="derive populations and dump the ledger CSV")
    p.add_argument("--time", type=float, required=True)
    p.add_argument("--partition", type=int, action="append", help="partition to derive (repeatable; default all)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("query", parents=[common], help="answer one FPQ or LCPQ request")
    p.add_argument("query", help="query request JSON")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("gtg", parents=[common], help="door-graph sizes, or a query over the door graph")
    p.add_argument("query", nargs="?", help="optional query request JSON")
    p.set_defaults(func=cmd_gtg)

    p = sub.add_parser("sim", parents=[common], help="simulate objects and write trajectories and flows")
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--drop-rate", type=float, default=0.0, help="fraction of trajectory points dropped")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("bench", parents=[common], help="time algorithms on a workload and score them")
    p.add_argument("--workload", required=True, help="workload JSON written by gen")
    p.add_argument("--algorithms", default="exact-local,exact-global,pp,nt,gtg")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--type", choices=[q.value for q in QueryType], default=QueryType.FPQ.value)
    p.add_argument("--instances", type=int, help="use only the first N instances")
    p.add_argument("--parameter", default="s2t", help="name or name=value labelling this parameter point")
    p.add_argument("--metrics-dir", help="write per-instance metric CSVs here")
    p.add_argument("--no-gold", action="store_true", help="skip the simulation and accuracy metrics")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ModelError, SpecError, SimulationHorizonError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
