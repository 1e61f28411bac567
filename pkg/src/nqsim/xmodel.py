"""X-model: both servers serve both types, with a waiting-time threshold on each diagonal.

Here the pathwise dominance of the OR system by its UB analog can fail.
:func:`replay_table1` reproduces a hand-built sample path where it fails, and
:func:`search_violations` looks for such paths in random streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .config import Discipline
from .coupling import (
    Inequality,
    TraceSample,
    ViolationReport,
    check_dominance,
    couple,
    violation_intervals,
)
from .dynamics import SystemState, new_state
from .errors import InvalidParameterError
from .events import EventList, EventStreamSet, build_coupled_streams


@dataclass(frozen=True)
class XConfig:
    lambda1: float
    lambda2: float
    mu1: float
    mu2: float
    t1: float  # type-1 threshold at server 2
    t2: float  # type-2 threshold at server 1
    horizon: float = 1000.0
    master_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("lambda1", "lambda2", "mu1", "mu2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be > 0, got {value!r}")
        if self.t1 < 0 or self.t2 < 0:
            raise InvalidParameterError("thresholds must be >= 0")
        if not self.horizon > 0:
            raise InvalidParameterError("horizon must be > 0")


@dataclass(frozen=True)
class ScriptedRun:
    arrivals: tuple[tuple[float, int], ...]
    z1_jumps: tuple[float, ...]
    z2_jumps: tuple[float, ...]
    t1: float
    t2: float
    horizon: float

    def streams(self) -> EventStreamSet:
        return EventStreamSet.from_script(self.arrivals, self.z1_jumps, self.z2_jumps, self.horizon)


COUNTEREXAMPLE_SCRIPT = ScriptedRun(
    arrivals=((0.0, 1), (1.0, 2), (2.0, 2)),
    z1_jumps=(10.0,),
    z2_jumps=(5.0, 6.0),
    t1=5.0,
    t2=1.0,
    horizon=12.0,
)

# (start, server, departure) per job, in arrival order
COUNTEREXAMPLE_OR = ((0.0, 1, 10.0), (1.0, 2, 5.0), (5.0, 2, 6.0))
COUNTEREXAMPLE_UB = ((5.0, 2, 6.0), (2.0, 2, 5.0), (3.0, 1, 10.0))


def x_step(state: SystemState, event, now: float) -> SystemState:
    """X-model OR discipline: own type freely, the other type only past its threshold."""
    return _x_step({Discipline.X_OR, Discipline.X_FCFS}, state, event, now)


def x_ub_step(state: SystemState, event, now: float) -> SystemState:
    """X-model UB discipline: every job waits its type's threshold before either server."""
    return _x_step({Discipline.X_UB}, state, event, now)


def _x_step(allowed, state, event, now):
    if state.discipline not in allowed:
        raise InvalidParameterError(f"state has discipline {state.discipline.value}")
    if event.time != now or now < state.now:
        raise InvalidParameterError(f"bad event time {event.time} at now={now}")
    state.apply(event)
    return state


def run_x_pair(
    streams: EventStreamSet, t1: float, t2: float, *, record: bool = False, exact_sets: bool = False
) -> tuple[list[TraceSample], SystemState, SystemState]:
    """Coupled X OR / X UB run; returns the full trace and both final states."""
    or_state = new_state(Discipline.X_OR, t1, t2, record=record)
    ub_state = new_state(Discipline.X_UB, t1, t2, record=record)
    events = EventList(streams, (t1, t2))
    trace = list(couple(events, or_state, ub_state, exact_sets=exact_sets))
    return trace, or_state, ub_state


@dataclass
class CounterexampleReplay:
    or_records: dict[int, tuple[float | None, int | None, float | None]]
    ub_records: dict[int, tuple[float | None, int | None, float | None]]
    q2_violation: list[tuple[float, float]]
    trace: list[TraceSample] = field(repr=False)

    @property
    def matches_reference(self) -> bool:
        return (
            tuple(self.or_records[i] for i in sorted(self.or_records)) == COUNTEREXAMPLE_OR
            and tuple(self.ub_records[i] for i in sorted(self.ub_records)) == COUNTEREXAMPLE_UB
        )

    def as_dict(self) -> dict:
        def rows(records):
            return [
                {"job": i + 1, "start": s, "server": srv, "departure": d}
                for i, (s, srv, d) in sorted(records.items())
            ]

        return {
            "or": rows(self.or_records),
            "ub": rows(self.ub_records),
            "q2_violation_intervals": [list(iv) for iv in self.q2_violation],
            "matches_reference": self.matches_reference,
        }


def replay_script(script: ScriptedRun) -> CounterexampleReplay:
    trace, or_state, ub_state = run_x_pair(script.streams(), script.t1, script.t2, record=True)
    return CounterexampleReplay(
        {i: r.as_tuple() for i, r in or_state.records.items()},
        {i: r.as_tuple() for i, r in ub_state.records.items()},
        violation_intervals(trace, Inequality.Q2, script.horizon),
        trace,
    )


def replay_table1() -> CounterexampleReplay:
    """Replay the three-job X-model counterexample with ``T1=5``, ``T2=1``."""
    return replay_script(COUNTEREXAMPLE_SCRIPT)


# queue-length inequalities; SERV2 fails trivially once type-2 jobs are delayed in UB
QUEUE_LENGTHS = (Inequality.Q1MINUS, Inequality.Q1PLUS, Inequality.Q2)


def first_violation(
    trace: list[TraceSample], inequalities=QUEUE_LENGTHS
) -> ViolationReport | None:
    wanted = {Inequality(i) for i in inequalities}
    for report in check_dominance(trace):
        if report.inequality in wanted:
            return report
    return None


def search_violations(
    config: XConfig,
    seeds,
    *,
    script: ScriptedRun | None = None,
    inequalities=QUEUE_LENGTHS,
) -> list[ViolationReport | None]:
    """Earliest violation per seed (``None`` where the run has none).

    Only the queue-length inequalities are searched by default; pass
    ``inequalities=DOMINANCE`` to include the server-occupancy ones too. With
    ``script`` given, the scripted streams are replayed once instead of sampling
    per seed.
    """
    if script is not None:
        trace, _, _ = run_x_pair(script.streams(), script.t1, script.t2)
        return [first_violation(trace, inequalities)]
    found = []
    for seed in seeds:
        streams = build_coupled_streams(replace(config, master_seed=int(seed)))
        trace, _, _ = run_x_pair(streams, config.t1, config.t2)
        found.append(first_violation(trace, inequalities))
    return found
