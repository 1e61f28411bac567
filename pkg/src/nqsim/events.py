"""Coupled Poisson event streams and the chronological event list.

Both systems of a coupled pair read the same :class:`EventStreamSet`; the
:class:`EventList` merges its four jump sequences with the deterministic
threshold-expiry timers created at each arrival.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import InvalidParameterError

# substream slots under a master seed
A1_STREAM, A2_STREAM, Z1_STREAM, Z2_STREAM, INSPECTION_STREAM = range(5)


class EventKind(enum.IntEnum):
    """Transition kinds; the integer value is the processing order on exact time ties."""

    ARRIVAL1 = 0
    ARRIVAL2 = 1
    THRESHOLD_EXPIRY = 2
    COMPLETION1 = 3
    COMPLETION2 = 4

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    EventKind.ARRIVAL1: "Arrival1",
    EventKind.ARRIVAL2: "Arrival2",
    EventKind.THRESHOLD_EXPIRY: "ThresholdExpiry",
    EventKind.COMPLETION1: "PotentialCompletion1",
    EventKind.COMPLETION2: "PotentialCompletion2",
}
_KINDS = tuple(EventKind)


class Event(NamedTuple):
    """One transition.

    ``job_id`` is set for arrivals and expiries. For an arrival, ``deadline`` is the
    time its threshold expires (``inf`` when no timer applies); for an expiry it
    equals ``time``.
    """

    time: float
    kind: EventKind
    job_id: int = -1
    deadline: float = math.inf


@dataclass
class Clock:
    now: float = 0.0
    last_event: float = 0.0

    def advance(self, t: float) -> None:
        if t < self.now:
            raise RuntimeError(f"clock moved backwards: {t} < {self.now}")
        self.last_event = self.now
        self.now = t


def substream_seed(master_seed: int, slot: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(slot,))


def sample_poisson_stream(rate: float, horizon: float, substream_seed) -> np.ndarray:
    """Jump times of a homogeneous Poisson process on ``(0, horizon]``.

    ``substream_seed`` is anything :func:`numpy.random.default_rng` accepts.
    """
    if not (math.isfinite(rate) and rate >= 0):
        raise InvalidParameterError(f"rate must be >= 0, got {rate!r}")
    if not (math.isfinite(horizon) and horizon > 0):
        raise InvalidParameterError(f"horizon must be > 0, got {horizon!r}")
    if rate == 0:
        return np.empty(0)
    rng = np.random.default_rng(substream_seed)
    expected = rate * horizon
    chunk = int(expected + 6.0 * math.sqrt(expected) + 16)
    pieces = []
    last = 0.0
    while last <= horizon:
        times = last + np.cumsum(rng.standard_exponential(chunk) / rate)
        pieces.append(times)
        last = float(times[-1])
        chunk = max(16, chunk // 4)
    times = np.concatenate(pieces)
    return times[: np.searchsorted(times, horizon, side="right")]


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class EventStreamSet:
    """The four jump sequences shared by every system of a coupled run."""

    a1_jumps: np.ndarray
    a2_jumps: np.ndarray
    z1_jumps: np.ndarray
    z2_jumps: np.ndarray
    master_seed: int | None
    horizon: float

    def __post_init__(self) -> None:
        for name in ("a1_jumps", "a2_jumps", "z1_jumps", "z2_jumps"):
            arr = _frozen(getattr(self, name))
            if arr.ndim != 1:
                raise InvalidParameterError(f"{name} must be one-dimensional")
            if arr.size:
                if np.any(np.diff(arr) <= 0):
                    raise InvalidParameterError(f"{name} must be strictly increasing")
                if arr[0] < 0 or arr[-1] > self.horizon:
                    raise InvalidParameterError(f"{name} must lie within [0, horizon]")
            object.__setattr__(self, name, arr)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventStreamSet):
            return NotImplemented
        return (
            self.master_seed == other.master_seed
            and self.horizon == other.horizon
            and all(
                np.array_equal(getattr(self, n), getattr(other, n))
                for n in ("a1_jumps", "a2_jumps", "z1_jumps", "z2_jumps")
            )
        )

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_script(
        cls,
        arrivals: Sequence[tuple[float, int]],
        z1_jumps: Sequence[float],
        z2_jumps: Sequence[float],
        horizon: float,
    ) -> EventStreamSet:
        """Explicit jump lists, e.g. for replaying a hand-constructed sample path."""
        a1 = sorted(t for t, kind in arrivals if kind == 1)
        a2 = sorted(t for t, kind in arrivals if kind == 2)
        if len(a1) + len(a2) != len(arrivals):
            raise InvalidParameterError("arrival job types must be 1 or 2")
        return cls(a1, a2, list(z1_jumps), list(z2_jumps), None, float(horizon))


def build_coupled_streams(config) -> EventStreamSet:
    """Sample the four streams for ``config`` from independent substreams of its seed.

    Each stream depends only on its own rate and substream, so changing one rate
    leaves the other three sequences untouched.
    """
    for name in ("lambda1", "lambda2", "mu1", "mu2"):
        value = getattr(config, name)
        if not (math.isfinite(value) and value > 0):
            raise InvalidParameterError(f"{name} must be > 0, got {value!r}")
    seed = int(config.master_seed)
    horizon = float(config.horizon)
    rates = (config.lambda1, config.lambda2, config.mu1, config.mu2)
    slots = (A1_STREAM, A2_STREAM, Z1_STREAM, Z2_STREAM)
    jumps = [sample_poisson_stream(r, horizon, substream_seed(seed, s)) for r, s in zip(rates, slots)]
    return EventStreamSet(*jumps, master_seed=seed, horizon=horizon)


class EventList:
    """Chronological merge of the jump streams and the pending threshold expiries.

    ``thresholds[i]`` is the waiting-time threshold for type-``i+1`` jobs; a value of
    0 (or ``None``) schedules no expiry timers for that type. Job ids are handed
    out here, in arrival order, so every system consuming this list agrees on them.
    """

    def __init__(self, streams: EventStreamSet, thresholds: tuple[float | None, float | None] = (None, None)):
        self.streams = streams
        self.horizon = streams.horizon
        self.thresholds = tuple(t if t else 0.0 for t in thresholds)
        self.clock = Clock()
        arrays = (streams.a1_jumps, streams.a2_jumps, streams.z1_jumps, streams.z2_jumps)
        kinds = (EventKind.ARRIVAL1, EventKind.ARRIVAL2, EventKind.COMPLETION1, EventKind.COMPLETION2)
        times = np.concatenate(arrays)
        codes = np.concatenate([np.full(a.size, int(k), dtype=np.int8) for a, k in zip(arrays, kinds)])
        order = np.lexsort((codes, times))
        self._times: list[float] = times[order].tolist()
        self._kinds: list[int] = codes[order].tolist()
        self._pos = 0
        self._next_id = 0
        # expiries are FIFO per type because each type has one constant threshold
        self.pending_expiries: tuple[deque, deque] = (deque(), deque())

    def _peek_expiry(self):
        q1, q2 = self.pending_expiries
        if q1 and q2:
            return q1[0] if q1[0] <= q2[0] else q2[0]
        if q1:
            return q1[0]
        if q2:
            return q2[0]
        return None

    def _pop_expiry(self, item) -> Event:
        q1, q2 = self.pending_expiries
        (q1 if q1 and q1[0] is item else q2).popleft()
        t, job_id = item
        self.clock.advance(t)
        return Event(t, EventKind.THRESHOLD_EXPIRY, job_id, t)

    def next_event(self) -> Event | None:
        """Return the next event, or ``None`` once the horizon is exhausted."""
        expiry = self._peek_expiry()
        pos = self._pos
        if pos < len(self._times):
            t = self._times[pos]
            k = self._kinds[pos]
            if expiry is not None and (expiry[0] < t or (expiry[0] == t and k > EventKind.THRESHOLD_EXPIRY)):
                return self._pop_expiry(expiry)
            self._pos = pos + 1
            self.clock.advance(t)
            if k <= EventKind.ARRIVAL2:
                job_id = self._next_id
                self._next_id += 1
                thr = self.thresholds[k]
                if thr > 0:
                    deadline = t + thr
                    self.pending_expiries[k].append((deadline, job_id))
                else:
                    deadline = math.inf
                return Event(t, _KINDS[k], job_id, deadline)
            return Event(t, _KINDS[k])
        if expiry is not None and expiry[0] <= self.horizon:
            return self._pop_expiry(expiry)
        return None

    def __iter__(self) -> Iterator[Event]:
        while True:
            event = self.next_event()
            if event is None:
                return
            yield event


__all__ = [
    "Clock",
    "Event",
    "EventKind",
    "EventList",
    "EventStreamSet",
    "build_coupled_streams",
    "sample_poisson_stream",
    "substream_seed",
]
