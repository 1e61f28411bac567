"""Discrete-event simulation of the N-model with a waiting-time threshold on the diagonal."""

from .config import Discipline, ScenarioConfig, inside_region
from .coupling import (
    Inequality,
    Pair,
    TraceSample,
    ViolationReport,
    check_dominance,
    check_lower_bounds,
    check_subsets,
    run_coupled,
)
from .dynamics import Counters, Job, SystemState, counters, fcfs_step, new_state, or_step, ub_step
from .events import Event, EventKind, EventList, EventStreamSet, build_coupled_streams, sample_poisson_stream
from .stability import estimate_drift, fcfs_equivalence_check, pasta_check, sweep_region
from .xmodel import XConfig, replay_table1, search_violations

__version__ = "0.1.0"

__all__ = [
    "Counters",
    "Discipline",
    "Event",
    "EventKind",
    "EventList",
    "EventStreamSet",
    "Inequality",
    "Job",
    "Pair",
    "ScenarioConfig",
    "SystemState",
    "TraceSample",
    "ViolationReport",
    "XConfig",
    "build_coupled_streams",
    "check_dominance",
    "check_lower_bounds",
    "check_subsets",
    "counters",
    "estimate_drift",
    "fcfs_equivalence_check",
    "fcfs_step",
    "inside_region",
    "new_state",
    "or_step",
    "pasta_check",
    "replay_table1",
    "run_coupled",
    "sample_poisson_stream",
    "search_violations",
    "sweep_region",
    "ub_step",
]
