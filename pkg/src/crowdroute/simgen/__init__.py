from .bench import ALGORITHMS, AlgorithmRun, run_algorithms
from .metrics import InstanceMetric, Metrics, evaluate, relative_error
from .simulate import SimState, SimulationHorizonError, gold_search, query_horizon, simulate, truth
from .space import (
    QueryInstance,
    SpaceSpec,
    SpecError,
    WorkloadSpec,
    generate_random_model,
    generate_space,
    generate_workload,
)

__all__ = [
    "ALGORITHMS",
    "AlgorithmRun",
    "InstanceMetric",
    "Metrics",
    "QueryInstance",
    "SimState",
    "SimulationHorizonError",
    "SpaceSpec",
    "SpecError",
    "WorkloadSpec",
    "evaluate",
    "generate_random_model",
    "generate_space",
    "generate_workload",
    "gold_search",
    "query_horizon",
    "relative_error",
    "run_algorithms",
    "simulate",
    "truth",
]
