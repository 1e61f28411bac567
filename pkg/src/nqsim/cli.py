"""Command-line entry point.

Exit codes: 0 success, 1 check failure, 2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import Discipline, ScenarioConfig
from .coupling import (
    Pair,
    TraceSample,
    check_trace,
    couple,
    run_coupled,
    write_trace_csv,
    write_violations_jsonl,
)
from .dynamics import new_state
from .errors import NQError
from .events import EventList, build_coupled_streams
from .stability import (
    Classification,
    boundary_distance,
    fcfs_equivalence_check,
    on_boundary,
    pasta_check,
    sweep_region,
    write_region_csv,
)
from .xmodel import (
    COUNTEREXAMPLE_SCRIPT,
    ScriptedRun,
    XConfig,
    replay_script,
    run_x_pair,
    search_violations,
)

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

COMMANDS = ("simulate", "couple", "sweep", "pasta", "fcfs-equiv", "replay-table1", "x-search")

FLOAT_KEYS = ("lambda1", "lambda2", "mu1", "mu2", "threshold", "t1", "t2", "horizon", "min_distance")
INT_KEYS = ("seed", "replications", "samples", "seeds")


class UsageError(NQError):
    pass


@dataclass
class RunManifest:
    command: str
    params: dict[str, Any]
    out: Path
    config: ScenarioConfig | XConfig | ScriptedRun | None = None
    seeds: list[int] = field(default_factory=list)
    negative_control: bool = False


# -- config files -------------------------------------------------------------


def parse_config_file(text: str) -> tuple[dict[str, str], dict[str, list[str]]]:
    """Flat ``key = value`` lines plus optional ``[section]`` blocks of raw lines.

    Sections ``[arrivals]`` (``time type`` per line), ``[z1]``, ``[z2]`` (one time
    per line) and ``[thresholds]`` (``t1 = ...``, ``t2 = ...``) describe a scripted
    X-model run. ``#`` starts a comment.
    """
    flat: dict[str, str] = {}
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            sections.setdefault(current, [])
            continue
        if current is None or current == "thresholds":
            if "=" not in line:
                raise UsageError(f"config line {lineno}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            flat[key.lower().replace("-", "_")] = value
        else:
            sections[current].append(line)
    return flat, sections


def script_from_sections(flat: dict[str, Any], sections: dict[str, list[str]]) -> ScriptedRun:
    try:
        arrivals = []
        for line in sections.get("arrivals", []):
            t, kind = line.split()
            arrivals.append((float(t), int(kind)))
        z1 = [float(x) for x in sections.get("z1", [])]
        z2 = [float(x) for x in sections.get("z2", [])]
        t1, t2 = float(flat["t1"]), float(flat["t2"])
    except (KeyError, ValueError) as exc:
        raise UsageError(f"malformed scripted run: {exc}") from None
    times = [t for t, _ in arrivals] + z1 + z2
    horizon = float(flat["horizon"]) if flat.get("horizon") is not None else (max(times) + 1.0 if times else 1.0)
    return ScriptedRun(tuple(arrivals), tuple(z1), tuple(z2), t1, t2, horizon)


# -- argument parsing ---------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    for key in FLOAT_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float, default=None)
    for key in INT_KEYS:
        p.add_argument(f"--{key}", dest=key, type=int, default=None)
    p.add_argument("--model", choices=("or", "ub", "fcfs", "x"), default=None)
    p.add_argument("--grid", default=None, help="start:stop:step, applied to both lambda1 and lambda2")
    p.add_argument("--thresholds", default=None, help="comma-separated list of T values")
    p.add_argument("--pair", choices=("or-ub", "or-mm1", "all"), default=None)
    p.add_argument("--out", default=None, help="output directory (default: current directory)")
    p.add_argument("--config", default=None, help="scenario file; its values override flags")
    p.add_argument("--negative-control", action="store_true", help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nqsim", description="N-model threshold queue simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        _common(sub.add_parser(name))
    return parser


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def expand_grid(spec: str) -> list[float]:
    try:
        start, stop, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise UsageError(f"--grid expects start:stop:step, got {spec!r}") from None
    if step <= 0 or stop < start:
        raise UsageError("--grid needs step > 0 and stop >= start")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 10) for k in range(n)]


def _require(params: dict, *keys: str) -> None:
    missing = [k for k in keys if params.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def parse_args(argv: Sequence[str] | None = None) -> RunManifest:
    """Parse ``argv`` into a manifest; raises :class:`UsageError` on bad input."""
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        raise UsageError("invalid command line") from exc
    params = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "negative_control")}
    sections: dict[str, list[str]] = {}
    if ns.config:
        try:
            text = Path(ns.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        flat, sections = parse_config_file(text)
        for key, value in flat.items():
            if key not in params:
                raise UsageError(f"unknown config key {key!r}")
            try:
                if key in FLOAT_KEYS:
                    params[key] = float(value)
                elif key in INT_KEYS:
                    params[key] = int(value)
                else:
                    params[key] = value
            except ValueError:
                raise UsageError(f"bad value for {key}: {value!r}") from None
    manifest = RunManifest(ns.command, params, Path(params.get("out") or "."), negative_control=ns.negative_control)
    try:
        _resolve(manifest, sections)
    except NQError as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(str(exc)) from exc
    return manifest


def _resolve(m: RunManifest, sections: dict[str, list[str]]) -> None:
    p = m.params
    cmd = m.command
    model = p.get("model")
    if model == "x" and p.get("threshold") is not None:
        raise UsageError("--threshold conflicts with --model x; use --t1/--t2")
    if model != "x" and (p.get("t1") is not None or p.get("t2") is not None) and cmd not in ("replay-table1", "x-search"):
        raise UsageError("--t1/--t2 apply only to --model x")
    seed = p.get("seed") or 0
    if cmd == "replay-table1":
        m.config = script_from_sections(p, sections) if sections else COUNTEREXAMPLE_SCRIPT
        return
    if cmd == "sweep":
        _require(p, "grid", "mu1", "mu2")
        expand_grid(p["grid"])
        if p.get("thresholds"):
            try:
                _float_list(p["thresholds"])
            except ValueError:
                raise UsageError(f"--thresholds expects comma-separated numbers, got {p['thresholds']!r}") from None
        return
    if (cmd in ("simulate", "couple") and model == "x") or cmd == "x-search":
        _require(p, "lambda1", "lambda2", "mu1", "mu2", "t1", "t2")
        m.config = XConfig(p["lambda1"], p["lambda2"], p["mu1"], p["mu2"], p["t1"], p["t2"],
                           p.get("horizon") or 1000.0, seed)
        m.seeds = [seed + k for k in range(p.get("seeds") or 1)]
        return
    _require(p, "lambda1", "lambda2", "mu1", "mu2")
    if model == "fcfs" and p.get("threshold") is None:
        p["threshold"] = 0.0
    _require(p, "threshold")
    discs = (Discipline.FCFS,) if model == "fcfs" else (Discipline.OR, Discipline.UB)
    if cmd == "fcfs-equiv":
        discs = (Discipline.UB, Discipline.FCFS)
    m.config = ScenarioConfig(p["lambda1"], p["lambda2"], p["mu1"], p["mu2"], p["threshold"],
                              p.get("horizon") or 1e4, seed, discs)


# -- execution ----------------------------------------------------------------


def _dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(type(o).__name__)


def _swap(trace):
    for s in trace:
        yield s._replace(or_counters=s.ub_counters, ub_counters=s.or_counters, or_sets=s.ub_sets, ub_sets=s.or_sets)


def _simulate(m: RunManifest) -> int:
    model = m.params.get("model") or "or"
    if model == "x":
        cfg: XConfig = m.config
        state = new_state(Discipline.X_OR, cfg.t1, cfg.t2)
        events = EventList(build_coupled_streams(cfg), (cfg.t1, cfg.t2))
    else:
        cfg = m.config
        disc = Discipline(model.upper())
        t = 0.0 if disc is Discipline.FCFS else cfg.threshold_t
        state = new_state(disc, t)
        events = EventList(build_coupled_streams(cfg), (t, 0.0))
    path = m.out / "trace.csv"
    with path.open("w", encoding="utf-8", newline="") as fh:
        rows = write_trace_csv(couple(events, state), fh, prefixes=(model,))
    print(f"simulate model={model} rows={rows} final={tuple(state.counters())} -> {path}")
    return EXIT_OK


def _couple(m: RunManifest) -> int:
    if (m.params.get("model") or "or") == "x":
        cfg: XConfig = m.config
        trace, _, _ = run_x_pair(build_coupled_streams(cfg), cfg.t1, cfg.t2)
        families = ("dominance", "subsets")
        label = "X_OR/X_UB"
    else:
        pair = {"or-ub": Pair.OR_UB, "or-mm1": Pair.OR_MM1, "all": Pair.OR_UB_MM1}[m.params.get("pair") or "or-ub"]
        trace = run_coupled(m.config, pair)
        families = {
            Pair.OR_UB: ("dominance", "subsets"),
            Pair.OR_MM1: ("lower_bounds",),
            Pair.OR_UB_MM1: ("dominance", "subsets", "lower_bounds"),
        }[pair]
        label = pair.value
    if m.negative_control:
        trace = _swap(trace)
    trace_path = m.out / "trace.csv"
    viol_path = m.out / "violations.jsonl"
    buffer: list[TraceSample] = []
    reports = []
    with trace_path.open("w", encoding="utf-8", newline="") as fh:

        def on_sample(s: TraceSample) -> None:
            buffer.append(s)
            if len(buffer) >= 4096:
                reports.extend(check_trace(buffer, families))
                buffer.clear()

        rows = write_trace_csv(trace, fh, on_sample=on_sample)
    reports.extend(check_trace(buffer, families))
    with viol_path.open("w", encoding="utf-8") as fh:
        write_violations_jsonl(reports, fh)
    print(f"couple pair={label} rows={rows} violations={len(reports)} -> {trace_path}, {viol_path}")
    return EXIT_OK if not reports else EXIT_CHECK


def _sweep(m: RunManifest) -> int:
    p = m.params
    values = expand_grid(p["grid"])
    mu1, mu2 = p["mu1"], p["mu2"]
    min_dist = p.get("min_distance") or 0.0
    grid = [
        (a, b) for a in values for b in values
        if not on_boundary(a, b, mu1, mu2) and boundary_distance(a, b, mu1, mu2) >= min_dist
    ]
    skipped = len(values) ** 2 - len(grid)
    thresholds = _float_list(p["thresholds"]) if p.get("thresholds") else [p.get("threshold") or 1.0]
    points = sweep_region(grid, mu1, mu2, thresholds, p.get("replications") or 3,
                          horizon=p.get("horizon") or 5000.0, master_seed=p.get("seed") or 0)
    path = m.out / "sweep.csv"
    with path.open("w", encoding="utf-8", newline="") as fh:
        write_region_csv(points, fh)
    contradictions = sum(
        1
        for pt in points
        for d in pt.drift.values()
        if (pt.inside_theory and d.classification is Classification.UNSTABLE)
        or (not pt.inside_theory and d.classification is Classification.STABLE)
    )
    print(f"sweep points={len(points)} skipped_near_boundary={skipped} thresholds={thresholds} "
          f"contradictions={contradictions} -> {path}")
    return EXIT_OK if contradictions == 0 else EXIT_CHECK


def _pasta(m: RunManifest) -> int:
    summary = pasta_check(m.config, m.params.get("samples") or 100_000)
    path = m.out / "pasta.json"
    record = asdict(summary)
    record.update(mean_ok=summary.mean_ok, dispersion_ok=summary.dispersion_ok, fit_ok=summary.fit_ok, passed=summary.passed)
    _dump_json(record, path)
    print(f"pasta mean={summary.mean:.6g} (theory {summary.theoretical_mean:.6g}) dispersion={summary.dispersion:.4f} "
          f"p={summary.p_value:.4g} passed={summary.passed} -> {path}")
    return EXIT_OK if summary.passed else EXIT_CHECK


def _fcfs_equiv(m: RunManifest) -> int:
    result = fcfs_equivalence_check(m.config, m.params.get("replications") or 20)
    path = m.out / "fcfs_equiv.json"

    def ci(c):
        return {"mean": c.mean, "low": float(c.low), "high": float(c.high), "replications": list(c.replications)}

    _dump_json({"ub_stage2": ci(result.ub), "fcfs": ci(result.fcfs), "overlap": result.overlap}, path)
    print(f"fcfs-equiv ub={result.ub.mean:.6g} [{result.ub.low:.6g}, {result.ub.high:.6g}] "
          f"fcfs={result.fcfs.mean:.6g} [{result.fcfs.low:.6g}, {result.fcfs.high:.6g}] overlap={result.overlap} -> {path}")
    return EXIT_OK if result.overlap else EXIT_CHECK


def _replay(m: RunManifest) -> int:
    script: ScriptedRun = m.config
    replay = replay_script(script)
    report = replay.as_dict()
    is_builtin = script == COUNTEREXAMPLE_SCRIPT
    if is_builtin:
        confirmed = replay.matches_reference and replay.q2_violation == [(3.0, 5.0)]
        report["status"] = "confirmed-counterexample" if confirmed else "mismatch"
    else:
        confirmed = True
        report["status"] = "replayed"
    path = m.out / "table1.json"
    _dump_json(report, path)
    print(f"replay-table1 status={report['status']} q2_violation={replay.q2_violation} -> {path}")
    return EXIT_OK if confirmed else EXIT_CHECK


def _x_search(m: RunManifest) -> int:
    cfg: XConfig = m.config
    found = search_violations(cfg, m.seeds)
    path = m.out / "x_search.jsonl"
    unconfirmed = 0
    with path.open("w", encoding="utf-8") as fh:
        for seed, report in zip(m.seeds, found):
            record: dict[str, Any] = {"seed": seed, "violation": None, "confirmed": None}
            if report is not None:
                trace, _, _ = run_x_pair(build_coupled_streams(replace(cfg, master_seed=seed)), cfg.t1, cfg.t2)
                ok = any(r == report for r in check_trace(trace, ("dominance",)))
                unconfirmed += not ok
                record["violation"] = json.loads(report.to_json())
                record["confirmed"] = ok
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    hits = sum(r is not None for r in found)
    print(f"x-search seeds={len(m.seeds)} with_violation={hits} unconfirmed={unconfirmed} -> {path}")
    return EXIT_OK if unconfirmed == 0 else EXIT_CHECK


_HANDLERS = {
    "simulate": _simulate,
    "couple": _couple,
    "sweep": _sweep,
    "pasta": _pasta,
    "fcfs-equiv": _fcfs_equiv,
    "replay-table1": _replay,
    "x-search": _x_search,
}


def execute(manifest: RunManifest) -> int:
    try:
        manifest.out.mkdir(parents=True, exist_ok=True)
        return _HANDLERS[manifest.command](manifest)
    except OSError as exc:
        print(f"nqsim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NQError as exc:
        print(f"nqsim: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main(argv: Sequence[str] | None = None) -> int:
    try:
        manifest = parse_args(argv)
    except UsageError as exc:
        if not isinstance(exc.__cause__, SystemExit):
            print(f"nqsim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return execute(manifest)


if __name__ == "__main__":
    sys.exit(main())
