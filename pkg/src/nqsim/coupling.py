"""Coupled runs and the pathwise inequality checkers.

A coupled run drives two systems (or one system and its two M/M/1 bounding
queues) with a single :class:`~nqsim.events.EventList`, emitting one
:class:`TraceSample` after every event. Checkers consume a trace in one pass,
so traces can be streamed straight from the runner.
"""

from __future__ import annotations

import csv
import enum
import heapq
import json
from dataclasses import asdict, dataclass
from typing import IO, Callable, Iterable, Iterator, NamedTuple, Sequence

from .config import Discipline, ScenarioConfig
from .dynamics import Counters, SystemState, new_state
from .errors import InvalidInputError
from .events import Event, EventKind, EventList, EventStreamSet, build_coupled_streams


class Pair(str, enum.Enum):
    OR_UB = "OR_UB"
    OR_MM1 = "OR_MM1"
    OR_UB_MM1 = "OR_UB_MM1"  # both checks in one pass


class Inequality(str, enum.Enum):
    Q1MINUS = "Q1MINUS"
    Q1PLUS = "Q1PLUS"
    Q2 = "Q2"
    CUST1 = "CUST1"
    SERV2 = "SERV2"
    SUBSET1M = "SUBSET1M"
    SUBSET1P = "SUBSET1P"
    SUBSET2 = "SUBSET2"
    LB_N2 = "LB_N2"
    LB_N = "LB_N"
    SLOTS = "SLOTS"


DOMINANCE = (Inequality.Q1MINUS, Inequality.Q1PLUS, Inequality.Q2, Inequality.CUST1, Inequality.SERV2)
SUBSETS = (Inequality.SUBSET1M, Inequality.SUBSET1P, Inequality.SUBSET2)
LOWER_BOUNDS = (Inequality.LB_N2, Inequality.LB_N, Inequality.SLOTS)


class TraceSample(NamedTuple):
    time: float
    event_kind: EventKind | None  # None for the initial empty-system sample
    or_counters: Counters
    ub_counters: Counters | None
    or_sets: tuple | None
    ub_sets: tuple | None
    mm1: tuple[int, int] | None = None  # (N2bar, Nbar)


@dataclass(frozen=True)
class ViolationReport:
    time: float
    inequality: Inequality
    lhs: int
    rhs: int
    event_kind: EventKind | None

    def to_json(self) -> str:
        record = asdict(self)
        record["inequality"] = self.inequality.value
        record["event_kind"] = _kind_label(self.event_kind)
        return json.dumps(record, sort_keys=True)


def _kind_label(kind: EventKind | None) -> str:
    return "Start" if kind is None else kind.label


# -- bounding single-server queues --------------------------------------------

_ALL_ARRIVALS = frozenset({EventKind.ARRIVAL1, EventKind.ARRIVAL2})
_ALL_COMPLETIONS = frozenset({EventKind.COMPLETION1, EventKind.COMPLETION2})


@dataclass(frozen=True, slots=True)
class Mm1State:
    """Number of jobs in a single-server queue fed by selected event streams."""

    n_jobs: int = 0
    arrivals: frozenset = _ALL_ARRIVALS
    completions: frozenset = _ALL_COMPLETIONS

    def __post_init__(self) -> None:
        if self.n_jobs < 0:
            raise ValueError("n_jobs must be >= 0")


def type2_mm1() -> Mm1State:
    """Companion driven by the type-2 arrivals and server-2 potential completions."""
    return Mm1State(0, frozenset({EventKind.ARRIVAL2}), frozenset({EventKind.COMPLETION2}))


def pooled_mm1() -> Mm1State:
    """Companion driven by all arrivals and both potential-completion streams."""
    return Mm1State(0, _ALL_ARRIVALS, _ALL_COMPLETIONS)


def mm1_step(state: Mm1State, event: Event | EventKind) -> Mm1State:
    kind = event.kind if isinstance(event, Event) else event
    if kind in state.arrivals:
        return Mm1State(state.n_jobs + 1, state.arrivals, state.completions)
    if kind in state.completions and state.n_jobs > 0:
        return Mm1State(state.n_jobs - 1, state.arrivals, state.completions)
    return state


# -- runners ------------------------------------------------------------------


def couple(
    events: Iterable[Event],
    first: SystemState,
    second: SystemState | None = None,
    *,
    with_mm1: bool = False,
    exact_sets: bool = False,
    check_states: bool = False,
) -> Iterator[TraceSample]:
    """Feed every event to each system and yield a sample after each one.

    ``exact_sets`` records explicit job-id sets instead of arrival-position
    ranges; ``check_states`` asserts every structural invariant after each event.
    Both are slow and meant for cross-checks on short runs.
    """
    get_sets = SystemState.job_id_sets if exact_sets else SystemState.job_sets
    lb2 = type2_mm1() if with_mm1 else None
    lb = pooled_mm1() if with_mm1 else None

    def sample(t: float, kind: EventKind | None) -> TraceSample:
        return TraceSample(
            t,
            kind,
            first.counters(),
            None if second is None else second.counters(),
            get_sets(first),
            None if second is None else get_sets(second),
            None if lb is None else (lb2.n_jobs, lb.n_jobs),
        )

    yield sample(0.0, None)
    for event in events:
        first.apply(event)
        if second is not None:
            second.apply(event)
        if with_mm1:
            lb2 = mm1_step(lb2, event.kind)
            lb = mm1_step(lb, event.kind)
        if check_states:
            first.check_invariants()
            if second is not None:
                second.check_invariants()
        yield sample(event.time, event.kind)


def run_coupled(
    config: ScenarioConfig,
    pair: Pair | str = Pair.OR_UB,
    *,
    streams: EventStreamSet | None = None,
    exact_sets: bool = False,
    check_states: bool = False,
    record: bool = False,
) -> Iterator[TraceSample]:
    """Run OR against UB (or against the M/M/1 bounds) on one shared stream set."""
    pair = Pair(pair)
    if streams is None:
        streams = build_coupled_streams(config)
    t = config.threshold_t
    events = EventList(streams, (t, 0.0))
    first = new_state(Discipline.OR, t, record=record)
    second = new_state(Discipline.UB, t, record=record) if pair is not Pair.OR_MM1 else None
    return couple(
        events,
        first,
        second,
        with_mm1=pair is not Pair.OR_UB,
        exact_sets=exact_sets,
        check_states=check_states,
    )


def run_decoupled(config: ScenarioConfig, seeds: tuple[int, int]) -> Iterator[TraceSample]:
    """OR and UB on independently sampled streams: a negative control for the checkers."""
    t = config.threshold_t
    or_events = EventList(build_coupled_streams(config.with_(master_seed=seeds[0])), (t, 0.0))
    ub_events = EventList(build_coupled_streams(config.with_(master_seed=seeds[1])), (t, 0.0))
    or_state = new_state(Discipline.OR, t)
    ub_state = new_state(Discipline.UB, t)
    tagged = heapq.merge(
        ((e, 0) for e in or_events),
        ((e, 1) for e in ub_events),
        key=lambda item: (item[0].time, int(item[0].kind), item[1]),
    )

    def sample(t: float, kind: EventKind | None) -> TraceSample:
        return TraceSample(t, kind, or_state.counters(), ub_state.counters(), or_state.job_sets(), ub_state.job_sets())

    yield sample(0.0, None)
    for event, which in tagged:
        (or_state if which == 0 else ub_state).apply(event)
        yield sample(event.time, event.kind)


# -- checkers -----------------------------------------------------------------


def _missing(inner, outer) -> int:
    """Number of elements of ``inner`` not in ``outer``."""
    if isinstance(inner, range) and isinstance(outer, range):
        overlap = min(inner.stop, outer.stop) - max(inner.start, outer.start)
        return len(inner) - max(0, overlap)
    return len(set(inner) - set(outer))


def _dominance(s: TraceSample):
    o, u = s.or_counters, s.ub_counters
    yield Inequality.Q1MINUS, o[0], u[0]
    yield Inequality.Q1PLUS, o[1], u[1]
    yield Inequality.Q2, o[2], u[2]
    yield Inequality.CUST1, o[0] + o[1] + o[3], u[0] + u[1] + u[3]
    yield Inequality.SERV2, o[4] + o[5], u[4] + u[5]


def _subsets(s: TraceSample):
    if s.or_sets is None or s.ub_sets is None:
        raise InvalidInputError("trace carries no job sets")
    for ineq, inner, outer in zip(SUBSETS, s.or_sets, s.ub_sets):
        yield ineq, _missing(inner, outer), 0


def _lower_bounds(s: TraceSample):
    if s.mm1 is None:
        raise InvalidInputError("trace was not produced with the M/M/1 companions")
    o = s.or_counters
    total = o[0] + o[1] + o[2] + o[3] + o[4] + o[5]
    waiting = o[0] + o[1] + o[2]
    n2, n = s.mm1
    # reported as lhs > rhs on violation
    yield Inequality.LB_N2, n2, total
    yield Inequality.LB_N, n, total
    if total > waiting + 2:
        yield Inequality.SLOTS, total, waiting + 2
    elif total < waiting:
        yield Inequality.SLOTS, waiting, total


def _require_pair(s: TraceSample) -> None:
    if s.ub_counters is None:
        raise InvalidInputError("dominance checks need a trace from a coupled OR/UB pair")


_FAMILIES: dict[str, tuple[Callable, Callable | None]] = {
    "dominance": (_dominance, _require_pair),
    "subsets": (_subsets, _require_pair),
    "lower_bounds": (_lower_bounds, None),
}


def check_trace(trace: Iterable[TraceSample], families: Sequence[str] = ("dominance", "subsets")) -> list[ViolationReport]:
    """Evaluate the selected inequality families on every sample in one pass."""
    checks = [_FAMILIES[f] for f in families]
    reports: list[ViolationReport] = []
    for s in trace:
        for fn, guard in checks:
            if guard is not None:
                guard(s)
            for ineq, lhs, rhs in fn(s):
                if lhs > rhs:
                    reports.append(ViolationReport(s.time, ineq, lhs, rhs, s.event_kind))
    return reports


def check_dominance(trace: Iterable[TraceSample]) -> list[ViolationReport]:
    return check_trace(trace, ("dominance",))


def check_subsets(trace: Iterable[TraceSample]) -> list[ViolationReport]:
    return check_trace(trace, ("subsets",))


def check_lower_bounds(trace: Iterable[TraceSample]) -> list[ViolationReport]:
    return check_trace(trace, ("lower_bounds",))


def violation_intervals(
    trace: Sequence[TraceSample], inequality: Inequality | str, horizon: float
) -> list[tuple[float, float]]:
    """Time intervals on which ``inequality`` fails.

    The state after the last event at a given time holds until the next event
    time, so samples superseded at the same instant cover no time.
    """
    inequality = Inequality(inequality)
    family = next(fn for fn, _ in _FAMILIES.values() if inequality in _members(fn))
    intervals: list[tuple[float, float]] = []
    for i, s in enumerate(trace):
        end = trace[i + 1].time if i + 1 < len(trace) else horizon
        if end <= s.time:
            continue
        bad = any(ineq is inequality and lhs > rhs for ineq, lhs, rhs in family(s))
        if not bad:
            continue
        if intervals and intervals[-1][1] == s.time:
            intervals[-1] = (intervals[-1][0], end)
        else:
            intervals.append((s.time, end))
    return intervals


def _members(fn) -> tuple[Inequality, ...]:
    return {_dominance: DOMINANCE, _subsets: SUBSETS, _lower_bounds: LOWER_BOUNDS}[fn]


# -- export -------------------------------------------------------------------

COUNTER_NAMES = Counters._fields


def fmt_time(t: float) -> str:
    return f"{t:.12g}"


def trace_header(sample: TraceSample, prefixes: tuple[str, ...] = ("or", "ub")) -> list[str]:
    cols = ["time", "event_kind"] + [f"{prefixes[0]}_{c}" for c in COUNTER_NAMES]
    if sample.ub_counters is not None:
        cols += [f"{prefixes[1]}_{c}" for c in COUNTER_NAMES]
    if sample.mm1 is not None:
        cols += ["mm1_n2", "mm1_n"]
    return cols


def write_trace_csv(
    trace: Iterable[TraceSample],
    fh: IO[str],
    on_sample: Callable[[TraceSample], None] | None = None,
    prefixes: tuple[str, ...] = ("or", "ub"),
) -> int:
    """Stream ``trace`` to CSV; returns the number of rows written."""
    writer = csv.writer(fh, lineterminator="\n")
    rows = 0
    for s in trace:
        if rows == 0:
            writer.writerow(trace_header(s, prefixes))
        row = [fmt_time(s.time), _kind_label(s.event_kind), *s.or_counters]
        if s.ub_counters is not None:
            row.extend(s.ub_counters)
        if s.mm1 is not None:
            row.extend(s.mm1)
        writer.writerow(row)
        if on_sample is not None:
            on_sample(s)
        rows += 1
    return rows


def write_violations_jsonl(reports: Iterable[ViolationReport], fh: IO[str]) -> None:
    for r in reports:
        fh.write(r.to_json() + "\n")
