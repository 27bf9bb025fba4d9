"""Crowd-aware indoor path planning: fastest and least-crowded path queries."""

from .estimator import EstimatorKind, NtConfig, Session
from .model import IndoorCrowdModel, IndoorPoint, ModelError, Path, load_model, read_model, to_gtg
from .router import CostVector, QueryResult, QueryType, RoutingConfig, search, search_adaptive, search_gtg

__all__ = [
    "CostVector",
    "EstimatorKind",
    "IndoorCrowdModel",
    "IndoorPoint",
    "ModelError",
    "NtConfig",
    "Path",
    "QueryResult",
    "QueryType",
    "RoutingConfig",
    "Session",
    "load_model",
    "read_model",
    "search",
    "search_adaptive",
    "search_gtg",
    "to_gtg",
]
