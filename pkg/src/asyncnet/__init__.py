"""Simulation and algebra of asynchronous networks with state-dependent
connection structures."""
from .core import (
    AdmissibleField,
    AsyncNetwork,
    Circle,
    ConfigurationError,
    ConnectionStructure,
    EventMap,
    GeneralizedConnectionStructure,
    GuardTable,
    Interval,
    NetworkState,
    Node,
    PhaseSpace,
    check_admissibility,
    evaluate_event_map,
    network_field,
)
from .semiflow import ChatterDetected, IntegratorConfig, Trajectory, flow, locate_event, step_smooth
from .functional import (
    FunctionalNetwork,
    NotOnInitialSet,
    TransitionResult,
    estimate_domain,
    run_generalized,
    run_transition,
)
from .algebra import (
    BoundaryMismatch,
    PreconditionFailed,
    amalgamate,
    chain,
    concatenate,
    is_trivial,
    product,
    verify_composition,
)
from .factorize import (
    CyclicPrecedence,
    EventRegion,
    EventStructuredNetwork,
    factorize_left,
    factorize_right,
    layer_count_minimal,
    realize,
)
from .netfile import NetworkFile, dump, dumps, load, loads

__version__ = "0.1.0"

__all__ = [
    "step_smooth",
    "locate_event",
    "flow",
    "Trajectory",
    "IntegratorConfig",
    "ChatterDetected",
    "AdmissibleField",
    "AsyncNetwork",
    "Circle",
    "ConfigurationError",
    "ConnectionStructure",
    "EventMap",
    "GeneralizedConnectionStructure",
    "GuardTable",
    "Interval",
    "NetworkState",
    "Node",
    "PhaseSpace",
    "check_admissibility",
    "evaluate_event_map",
    "network_field",
    "FunctionalNetwork",
    "NotOnInitialSet",
    "TransitionResult",
    "estimate_domain",
    "run_generalized",
    "run_transition",
    "BoundaryMismatch",
    "PreconditionFailed",
    "amalgamate",
    "chain",
    "concatenate",
    "is_trivial",
    "product",
    "verify_composition",
    "CyclicPrecedence",
    "EventRegion",
    "EventStructuredNetwork",
    "factorize_left",
    "factorize_right",
    "layer_count_minimal",
    "realize",
    "NetworkFile",
    "dump",
    "dumps",
    "load",
    "loads",
]
