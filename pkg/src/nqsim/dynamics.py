"""State machines for two-type, two-server skill-based queues.

A single engine covers every discipline. Each job type keeps two arrival-ordered
queues: jobs whose waiting time is still below the type's threshold (``minus``)
and jobs that have reached it (``plus``). Each (type, server) pair has an access
rule -- always, only after the threshold, or never -- and the disciplines differ
only in that table:

========  ==================  ==================
          type 1 (s1, s2)      type 2 (s1, s2)
========  ==================  ==================
OR        always, after       never, always
UB        after, after        never, always
FCFS      always, always      never, always
X_OR      always, after       after, always
X_UB      after, after        after, after
X_FCFS    always, always      always, always
========  ==================  ==================

Waiting jobs of one type always leave their queues from the head, so each queue
is a contiguous block of that type's arrival sequence.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

from .config import Discipline
from .errors import CorruptedTraceError, InvalidEventError, InvalidParameterError
from .events import Event, EventKind

ALWAYS, AFTER, NEVER = 0, 1, 2

_ACCESS = {
    Discipline.OR: ((ALWAYS, AFTER), (NEVER, ALWAYS)),
    Discipline.UB: ((AFTER, AFTER), (NEVER, ALWAYS)),
    Discipline.FCFS: ((ALWAYS, ALWAYS), (NEVER, ALWAYS)),
    Discipline.X_OR: ((ALWAYS, AFTER), (AFTER, ALWAYS)),
    Discipline.X_UB: ((AFTER, AFTER), (AFTER, AFTER)),
    Discipline.X_FCFS: ((ALWAYS, ALWAYS), (ALWAYS, ALWAYS)),
}

_ZERO_THRESHOLD = {Discipline.FCFS, Discipline.X_FCFS}
_X_MODEL = {Discipline.X_OR, Discipline.X_UB, Discipline.X_FCFS}


@dataclass(frozen=True, slots=True)
class Job:
    id: int
    job_type: int
    arrival_time: float
    seq: int  # position within its own type's arrival sequence
    expires_at: float = math.inf


class Counters(NamedTuple):
    q1_minus: int
    q1_plus: int
    q2: int
    r1: int
    r2: int
    r3: int

    @property
    def q1(self) -> int:
        return self.q1_minus + self.q1_plus

    @property
    def waiting(self) -> int:
        return self.q1_minus + self.q1_plus + self.q2

    @property
    def in_system(self) -> int:
        return self.q1_minus + self.q1_plus + self.q2 + self.r1 + self.r2 + self.r3


class JobRecord:
    __slots__ = ("job_type", "arrival", "start", "server", "departure")

    def __init__(self, job_type: int, arrival: float):
        self.job_type = job_type
        self.arrival = arrival
        self.start: float | None = None
        self.server: int | None = None
        self.departure: float | None = None

    def as_tuple(self) -> tuple[float | None, int | None, float | None]:
        return (self.start, self.server, self.departure)

    def __repr__(self) -> str:
        return f"JobRecord(type={self.job_type}, arrival={self.arrival}, start={self.start}, server={self.server}, departure={self.departure})"


class SystemState:
    """Queues and server occupancy of one system.

    ``thresholds`` holds the waiting-time thresholds for type-1 and type-2 jobs;
    a threshold of 0 puts arrivals straight into the ``plus`` queue. In the N-model
    only type 1 has a threshold.
    """

    __slots__ = ("discipline", "thresholds", "access", "minus", "plus", "servers", "now", "last_id", "arrived", "records")

    def __init__(self, discipline: Discipline | str, thresholds: tuple[float, float], *, record: bool = False):
        discipline = Discipline(discipline)
        t1, t2 = (float(t) for t in thresholds)
        if t1 < 0 or t2 < 0 or not (math.isfinite(t1) and math.isfinite(t2)):
            raise InvalidParameterError(f"thresholds must be finite and >= 0, got {thresholds!r}")
        if discipline in _ZERO_THRESHOLD and (t1 or t2):
            raise InvalidParameterError(f"{discipline.value} has no thresholds")
        if discipline in (Discipline.OR, Discipline.UB) and (t1 <= 0 or t2 != 0):
            raise InvalidParameterError(f"{discipline.value} needs a positive type-1 threshold only")
        self.discipline = discipline
        self.thresholds = (t1, t2)
        self.access = _ACCESS[discipline]
        self.minus: tuple[deque[Job], deque[Job]] = (deque(), deque())
        self.plus: tuple[deque[Job], deque[Job]] = (deque(), deque())
        self.servers: list[Job | None] = [None, None]
        self.now = 0.0
        self.last_id = -1
        self.arrived = [0, 0]
        self.records: dict[int, JobRecord] | None = {} if record else None

    # -- transitions ---------------------------------------------------------

    def apply(self, event: Event) -> None:
        """Advance the state through ``event`` (in place)."""
        kind = event.kind
        self.now = event.time
        if kind <= EventKind.ARRIVAL2:
            self._arrive(event, kind + 1)
        elif kind == EventKind.THRESHOLD_EXPIRY:
            self._expire(event.job_id)
        else:
            self._complete(kind - EventKind.COMPLETION1)

    def _arrive(self, event: Event, job_type: int) -> None:
        if event.job_id <= self.last_id:
            raise CorruptedTraceError(f"arrival reuses job id {event.job_id}")
        self.last_id = event.job_id
        idx = job_type - 1
        threshold = self.thresholds[idx]
        if threshold > 0 and event.deadline == math.inf:
            raise InvalidEventError(f"arrival of job {event.job_id} carries no threshold timer")
        seq = self.arrived[idx]
        self.arrived[idx] = seq + 1
        job = Job(event.job_id, job_type, event.time, seq, event.deadline if threshold > 0 else math.inf)
        if self.records is not None:
            self.records[job.id] = JobRecord(job_type, event.time)
        if threshold > 0:
            self.minus[idx].append(job)
        else:
            self.plus[idx].append(job)
        self._fill(idx)

    def _expire(self, job_id: int) -> None:
        if self.discipline in _ZERO_THRESHOLD:
            raise InvalidEventError(f"{self.discipline.value} systems have no threshold timers")
        for idx in (0, 1):
            queue = self.minus[idx]
            if queue and queue[0].id == job_id:
                self.plus[idx].append(queue.popleft())
                self._fill(idx)
                return
        if job_id > self.last_id or job_id < 0:
            raise CorruptedTraceError(f"threshold expiry for unknown job {job_id}")
        # the job has already started service; the timer is stale

    def _complete(self, server: int) -> None:
        job = self.servers[server]
        if job is None:
            return
        self.servers[server] = None
        if self.records is not None:
            self.records[job.id].departure = self.now
        self._start_next(server)

    def _fill(self, job_idx: int) -> None:
        # a new candidate of type job_idx+1 goes to its own-type server first
        for server in (job_idx, 1 - job_idx):
            if self.servers[server] is None:
                self._start_next(server)

    def _pick(self, server: int):
        best = None
        source = None
        # own type first: on equal arrival times the own-type job wins
        for idx in (server, 1 - server):
            rule = self.access[idx][server]
            if rule == NEVER:
                continue
            queue = self.plus[idx]
            if not queue:
                if rule != ALWAYS or not self.minus[idx]:
                    continue
                queue = self.minus[idx]
            cand = queue[0]
            if best is None or cand.arrival_time < best.arrival_time:
                best, source = cand, queue
        return best, source

    def _start_next(self, server: int) -> None:
        job, source = self._pick(server)
        if job is None:
            return
        source.popleft()
        self.servers[server] = job
        if self.records is not None:
            rec = self.records[job.id]
            rec.start = self.now
            rec.server = server + 1

    # -- observation ---------------------------------------------------------

    def counters(self) -> Counters:
        s1, s2 = self.servers
        r2 = r3 = 0
        if s2 is not None:
            if s2.job_type == 2:
                r2 = 1
            else:
                r3 = 1
        return Counters(
            len(self.minus[0]),
            len(self.plus[0]),
            len(self.minus[1]) + len(self.plus[1]),
            0 if s1 is None else 1,
            r2,
            r3,
        )

    def job_sets(self) -> tuple[range, range, range]:
        """Contents of Q1-, Q1+ and Q2 as ranges of per-type arrival positions."""
        m1, p1 = self.minus[0], self.plus[0]
        m2, p2 = self.minus[1], self.plus[1]
        first2 = p2 if p2 else m2
        last2 = m2 if m2 else p2
        return (
            range(m1[0].seq, m1[-1].seq + 1) if m1 else range(0),
            range(p1[0].seq, p1[-1].seq + 1) if p1 else range(0),
            range(first2[0].seq, last2[-1].seq + 1) if first2 else range(0),
        )

    def job_id_sets(self) -> tuple[frozenset, frozenset, frozenset]:
        """Contents of Q1-, Q1+ and Q2 as explicit job-id sets (slow; for cross-checks)."""
        return (
            frozenset(j.id for j in self.minus[0]),
            frozenset(j.id for j in self.plus[0]),
            frozenset(j.id for j in self.minus[1]) | frozenset(j.id for j in self.plus[1]),
        )

    def check_invariants(self) -> None:
        """Raise AssertionError if any structural invariant is broken at ``self.now``."""
        now = self.now
        for idx in (0, 1):
            minus, plus = self.minus[idx], self.plus[idx]
            jobs = list(plus) + list(minus)
            seqs = [j.seq for j in jobs]
            assert seqs == list(range(seqs[0], seqs[0] + len(seqs))) if seqs else True, (
                f"type-{idx + 1} waiting jobs are not a contiguous arrival block: {seqs}"
            )
            assert all(j.job_type == idx + 1 for j in jobs)
            # equality is allowed: a same-instant arrival is processed before the expiry
            for j in minus:
                assert now <= j.expires_at, f"job {j.id} past its threshold but still in minus queue"
            for j in plus:
                assert now >= j.expires_at or self.thresholds[idx] == 0, f"job {j.id} promoted early"
        waiting_ids = {j.id for q in (*self.minus, *self.plus) for j in q}
        for s in self.servers:
            if s is not None:
                assert s.id not in waiting_ids, f"job {s.id} both waiting and in service"
        for server in (0, 1):
            if self.servers[server] is None:
                job, _ = self._pick(server)
                assert job is None, f"server {server + 1} idles while job {job.id} is eligible"
        if self.records is not None:
            for job_type in (1, 2):
                starts = [
                    (rec.arrival, rec.start)
                    for rec in self.records.values()
                    if rec.job_type == job_type and rec.start is not None
                ]
                starts.sort()
                assert all(a[1] <= b[1] for a, b in zip(starts, starts[1:])), f"type-{job_type} started out of order"


def new_state(discipline: Discipline | str, threshold: float = 0.0, threshold2: float = 0.0, *, record: bool = False) -> SystemState:
    """Empty system; ``threshold`` applies to type 1 and ``threshold2`` to type 2 (X-model only)."""
    discipline = Discipline(discipline)
    if discipline not in _X_MODEL and threshold2:
        raise InvalidParameterError("the N-model has no type-2 threshold")
    return SystemState(discipline, (threshold, threshold2), record=record)


def _step(expected: set[Discipline], state: SystemState, event: Event, now: float) -> SystemState:
    if state.discipline not in expected:
        raise InvalidParameterError(f"state has discipline {state.discipline.value}")
    if event.time != now:
        raise InvalidEventError(f"event time {event.time} differs from now={now}")
    if now < state.now:
        raise InvalidEventError(f"event at {now} precedes the last update at {state.now}")
    state.apply(event)
    return state


def or_step(state: SystemState, event: Event, now: float) -> SystemState:
    """OR discipline: server 2 may take a type-1 job only once it has waited ``T``."""
    return _step({Discipline.OR}, state, event, now)


def ub_step(state: SystemState, event: Event, now: float) -> SystemState:
    """UB discipline: type-1 jobs are barred from both servers until they have waited ``T``."""
    return _step({Discipline.UB}, state, event, now)


def fcfs_step(state: SystemState, event: Event, now: float) -> SystemState:
    """Plain FCFS N-model (no threshold)."""
    return _step({Discipline.FCFS}, state, event, now)


def counters(state: SystemState) -> Counters:
    return state.counters()
