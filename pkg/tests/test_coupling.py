import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nqsim.config import ScenarioConfig
from nqsim.coupling import (
    DOMINANCE,
    Inequality,
    Mm1State,
    Pair,
    TraceSample,
    ViolationReport,
    check_dominance,
    check_lower_bounds,
    check_subsets,
    check_trace,
    couple,
    mm1_step,
    pooled_mm1,
    run_coupled,
    run_decoupled,
    trace_header,
    type2_mm1,
    violation_intervals,
    write_trace_csv,
    write_violations_jsonl,
)
from nqsim.dynamics import Counters, new_state
from nqsim.errors import InvalidInputError
from nqsim.events import EventKind, EventList, EventStreamSet, build_coupled_streams

ALL = ("dominance", "subsets", "lower_bounds")
ZERO = Counters(0, 0, 0, 0, 0, 0)


def test_horizon_before_first_jump_gives_one_empty_sample():
    trace = list(run_coupled(ScenarioConfig(0.4, 0.4, 1, 1, 1.0, 1e-9, 0), Pair.OR_UB_MM1))
    assert len(trace) == 1
    s = trace[0]
    assert s.time == 0.0 and s.event_kind is None
    assert s.or_counters == ZERO and s.ub_counters == ZERO and s.mm1 == (0, 0)


rates = st.floats(0.05, 2.5)


@settings(max_examples=40, deadline=None)
@given(
    l1=rates, l2=rates, m1=rates, m2=rates,
    t=st.sampled_from([0.05, 0.3, 1.0, 4.0, 25.0]),
    seed=st.integers(0, 2**63),
)
def test_coupled_runs_never_violate(l1, l2, m1, m2, t, seed):
    cfg = ScenarioConfig(l1, l2, m1, m2, t, 300.0, seed)
    reports = check_trace(run_coupled(cfg, Pair.OR_UB_MM1, check_states=True), ALL)
    assert reports == []


grid_times = st.lists(st.integers(0, 120).map(lambda k: k / 4), max_size=30, unique=True).map(sorted)


@settings(max_examples=150, deadline=None)
@given(grid_times, grid_times, grid_times, grid_times, st.sampled_from([0.25, 0.5, 1.0, 3.0, 10.0]))
def test_scripted_paths_with_ties_never_violate(a1, a2, z1, z2, t):
    arrivals = [(x, 1) for x in a1] + [(x, 2) for x in a2]
    streams = EventStreamSet.from_script(arrivals, z1, z2, 30.0)
    cfg = ScenarioConfig(1, 1, 1, 1, t, 30.0)
    trace = list(run_coupled(cfg, Pair.OR_UB_MM1, streams=streams, exact_sets=True, check_states=True))
    assert check_trace(trace, ALL) == []


def brute_force(trace):
    """Re-evaluate the dominance and subset relations from explicit job sets."""
    found = []
    for s in trace:
        o, u = s.or_counters, s.ub_counters
        osets = [set(x) for x in s.or_sets]
        usets = [set(x) for x in s.ub_sets]
        assert [len(x) for x in osets] == [o.q1_minus, o.q1_plus, o.q2]
        assert [len(x) for x in usets] == [u.q1_minus, u.q1_plus, u.q2]
        pairs = [
            (Inequality.Q1MINUS, len(osets[0]), len(usets[0])),
            (Inequality.Q1PLUS, len(osets[1]), len(usets[1])),
            (Inequality.Q2, len(osets[2]), len(usets[2])),
            (Inequality.CUST1, len(osets[0]) + len(osets[1]) + o.r1, len(usets[0]) + len(usets[1]) + u.r1),
            (Inequality.SERV2, o.r2 + o.r3, u.r2 + u.r3),
        ]
        found += [(s.time, i, lhs, rhs) for i, lhs, rhs in pairs if lhs > rhs]
        for i, a, b in zip((Inequality.SUBSET1M, Inequality.SUBSET1P, Inequality.SUBSET2), osets, usets):
            if not a <= b:
                found.append((s.time, i, len(a - b), 0))
    return found


def as_tuples(reports):
    return [(r.time, r.inequality, r.lhs, r.rhs) for r in reports]


def test_checker_matches_brute_force_on_decoupled_runs():
    cfg = ScenarioConfig(0.7, 0.6, 1, 1, 1.0, 150.0)
    seen = 0
    for k in range(10):
        trace = list(run_decoupled(cfg, (2 * k, 2 * k + 1)))
        expected = brute_force(trace)
        got = as_tuples(check_dominance(trace)) + as_tuples(check_subsets(trace))
        assert sorted(got, key=repr) == sorted(expected, key=repr)
        seen += len(expected)
    assert seen > 0


def test_range_and_explicit_sets_agree():
    cfg = ScenarioConfig(0.9, 0.5, 1, 1, 2.0, 300.0, 8)
    fast = list(run_coupled(cfg))
    exact = list(run_coupled(cfg, exact_sets=True))
    assert len(fast) == len(exact)
    for a, b in zip(fast, exact):
        assert a.or_counters == b.or_counters and a.ub_counters == b.ub_counters
        assert [len(x) for x in a.or_sets] == [len(x) for x in b.or_sets]
    assert brute_force(exact) == []


def test_decoupled_negative_control_fires():
    cfg = ScenarioConfig(0.6, 0.6, 1, 1, 1.0, 200.0)
    hits = [bool(check_trace(run_decoupled(cfg, (2 * k, 2 * k + 1)))) for k in range(50)]
    assert any(hits)


def test_both_systems_see_identical_arrivals():
    cfg = ScenarioConfig(0.8, 0.5, 1, 1, 1.5, 200.0, 4)
    streams = build_coupled_streams(cfg)
    a, b = new_state("OR", 1.5, record=True), new_state("UB", 1.5, record=True)
    for _ in couple(EventList(streams, (1.5, 0.0)), a, b):
        pass
    assert len(a.records) > 10
    assert {i: r.arrival for i, r in a.records.items()} == {i: r.arrival for i, r in b.records.items()}


# -- single-server companions ---------------------------------------------------


def test_mm1_saturates_at_zero():
    assert mm1_step(pooled_mm1(), EventKind.COMPLETION1).n_jobs == 0


def test_mm1_arrival_increments():
    assert mm1_step(pooled_mm1(), EventKind.ARRIVAL2).n_jobs == 1


@given(st.integers(0, 50))
def test_mm1_alternating_pairs_telescope(k):
    s = type2_mm1()
    for _ in range(k):
        s = mm1_step(s, EventKind.ARRIVAL2)
        s = mm1_step(s, EventKind.COMPLETION2)
    assert s.n_jobs == 0


def test_type2_companion_ignores_other_streams():
    s = type2_mm1()
    for kind in (EventKind.ARRIVAL1, EventKind.THRESHOLD_EXPIRY, EventKind.COMPLETION1):
        s = mm1_step(s, kind)
    assert s.n_jobs == 0


def test_mm1_rejects_negative_count():
    with pytest.raises(ValueError):
        Mm1State(-1)


def test_or_mm1_pair_has_no_ub_side():
    trace = list(run_coupled(ScenarioConfig(1.2, 0.9, 1, 1, 1.0, 500.0, 2), Pair.OR_MM1))
    assert check_lower_bounds(trace) == []
    assert all(s.ub_counters is None for s in trace)
    with pytest.raises(InvalidInputError):
        check_dominance(trace)


def test_lower_bound_violation_is_reported():
    bad = TraceSample(1.0, EventKind.ARRIVAL2, Counters(0, 0, 0, 0, 1, 0), None, None, None, (2, 1))
    reports = check_lower_bounds([bad])
    assert [(r.inequality, r.lhs, r.rhs) for r in reports] == [(Inequality.LB_N2, 2, 1)]


def test_slot_bound_violation_is_reported():
    bad = TraceSample(1.0, EventKind.ARRIVAL1, Counters(0, 0, 1, 1, 1, 1), None, None, None, (0, 0))
    assert [r.inequality for r in check_lower_bounds([bad])] == [Inequality.SLOTS]


# -- guards and empty input -----------------------------------------------------


@pytest.mark.parametrize("check", [check_dominance, check_subsets, check_lower_bounds])
def test_empty_trace_gives_empty_report(check):
    assert check([]) == []


def test_lower_bounds_need_companions():
    trace = list(run_coupled(ScenarioConfig(0.4, 0.4, 1, 1, 1.0, 10.0)))
    with pytest.raises(InvalidInputError):
        check_lower_bounds(trace)


def test_subsets_need_sets():
    s = TraceSample(0.0, None, ZERO, ZERO, None, None)
    with pytest.raises(InvalidInputError):
        check_subsets([s])


# -- intervals and export -------------------------------------------------------


def _sample(t, q2_or, q2_ub):
    return TraceSample(t, EventKind.ARRIVAL2, Counters(0, 0, q2_or, 0, 0, 0), Counters(0, 0, q2_ub, 0, 0, 0), None, None)


def test_violation_intervals_merge_and_skip_instants():
    trace = [_sample(0, 0, 0), _sample(1, 1, 0), _sample(2, 2, 1), _sample(3, 1, 1), _sample(4, 1, 0), _sample(4, 0, 0)]
    assert violation_intervals(trace, Inequality.Q2, 10.0) == [(1, 3)]
    assert violation_intervals(trace[:3], "Q2", 10.0) == [(1, 10.0)]


def test_trace_csv_layout():
    cfg = ScenarioConfig(0.4, 0.4, 1, 1, 1.0, 50.0, 7)
    fh = io.StringIO()
    rows = write_trace_csv(run_coupled(cfg), fh)
    lines = fh.getvalue().splitlines()
    assert rows == len(lines) - 1
    header = lines[0].split(",")
    assert header[:2] == ["time", "event_kind"] and len(header) == 14
    assert header[2] == "or_q1_minus" and header[-1] == "ub_r3"
    assert lines[1].startswith("0,Start,")
    assert trace_header(next(iter(run_coupled(cfg)))) == header


def test_violations_jsonl():
    reports = [ViolationReport(3.0, Inequality.Q2, 1, 0, EventKind.ARRIVAL2)]
    fh = io.StringIO()
    write_violations_jsonl(reports, fh)
    record = json.loads(fh.getvalue())
    assert record == {"time": 3.0, "inequality": "Q2", "lhs": 1, "rhs": 0, "event_kind": "Arrival2"}


def test_dominance_family_is_complete():
    assert {i.value for i in DOMINANCE} == {"Q1MINUS", "Q1PLUS", "Q2", "CUST1", "SERV2"}
