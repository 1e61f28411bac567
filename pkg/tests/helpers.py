"""Hand-built events for driving state machines directly."""

import math

from nqsim.events import Event, EventKind


def arrival(t, job_type, job_id, threshold=0.0):
    kind = EventKind.ARRIVAL1 if job_type == 1 else EventKind.ARRIVAL2
    return Event(t, kind, job_id, t + threshold if threshold > 0 else math.inf)


def expiry(t, job_id):
    return Event(t, EventKind.THRESHOLD_EXPIRY, job_id, t)


def completion(t, server):
    return Event(t, EventKind.COMPLETION1 if server == 1 else EventKind.COMPLETION2)
