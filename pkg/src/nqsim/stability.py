"""Empirical stability classification and the distributional checks on the UB system.

Positive recurrence cannot be observed in a finite run, so points are classified
from the growth drift of the windowed mean queue length: a slope statistically
indistinguishable from zero is evidence of stability, a clearly positive slope is
evidence of instability.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from array import array
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .config import Discipline, ScenarioConfig, inside_region
from .dynamics import new_state
from .errors import BoundaryPointError, InsufficientDataError, InvalidParameterError, UnstableParametersError
from .events import INSPECTION_STREAM, EventList, build_coupled_streams, sample_poisson_stream, substream_seed

WARMUP_FRACTION = 0.2
N_WINDOWS = 100
EPS0 = 0.01
BOUNDARY_TOL = 1e-9

# column indices into SamplePath.counts
Q1M, Q1P, Q2, R1, R2, R3 = range(6)

METRICS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "total": lambda c: c[:, Q1M] + c[:, Q1P] + c[:, Q2],
    "q1": lambda c: c[:, Q1M] + c[:, Q1P],
    "q2": lambda c: c[:, Q2],
    "q1_minus": lambda c: c[:, Q1M],
    "ub_stage2": lambda c: c[:, Q1P] + c[:, Q2],
}


class Classification(str, enum.Enum):
    STABLE = "stable-evidence"
    UNSTABLE = "unstable-evidence"
    INCONCLUSIVE = "inconclusive"


def worker_count() -> int:
    cap = os.environ.get("NQ_THREADS")
    cpus = os.cpu_count() or 1
    if cap:
        try:
            return max(1, min(int(cap), cpus))
        except ValueError:
            raise InvalidParameterError(f"NQ_THREADS must be an integer, got {cap!r}") from None
    return cpus


def parallel_map(fn, items: Sequence, workers: int | None = None) -> list:
    """Order-preserving map over independent runs, in processes when ``workers > 1``."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def replication_seed(master_seed: int, index: int, group: int = 0) -> int:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(1000 + group, index))
    return int(ss.generate_state(1, np.uint64)[0])


# -- sample paths -------------------------------------------------------------


@dataclass(frozen=True)
class SamplePath:
    """Piecewise-constant counter trajectory: ``counts[k]`` holds on ``[times[k], times[k+1])``."""

    times: np.ndarray
    counts: np.ndarray  # shape (n, 6): q1_minus, q1_plus, q2, r1, r2, r3
    horizon: float

    def metric(self, name: str) -> np.ndarray:
        return METRICS[name](self.counts)

    def value_at(self, name: str, when: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.times, when, side="right") - 1
        return self.metric(name)[idx]

    def integral(self, name: str, edges: np.ndarray) -> np.ndarray:
        """Integral of the metric from 0 to each of ``edges``."""
        values = self.metric(name).astype(float)
        t = self.times
        cum = np.concatenate(([0.0], np.cumsum(values[:-1] * np.diff(t))))
        idx = np.searchsorted(t, edges, side="right") - 1
        return cum[idx] + values[idx] * (edges - t[idx])

    def window_means(self, name: str, start: float, stop: float, n: int) -> tuple[np.ndarray, np.ndarray]:
        edges = np.linspace(start, stop, n + 1)
        areas = np.diff(self.integral(name, edges))
        return 0.5 * (edges[:-1] + edges[1:]), areas / np.diff(edges)

    def time_average(self, name: str, start: float, stop: float | None = None) -> float:
        stop = self.horizon if stop is None else stop
        lo, hi = self.integral(name, np.array([start, stop]))
        return float((hi - lo) / (stop - start))


def sample_path(config: ScenarioConfig, discipline: Discipline | str, seed: int | None = None) -> SamplePath:
    """Simulate one system and record its counters after every event."""
    discipline = Discipline(discipline)
    if seed is not None:
        config = config.with_(master_seed=seed)
    t = 0.0 if discipline is Discipline.FCFS else config.threshold_t
    state = new_state(discipline, t)
    events = EventList(build_coupled_streams(config), (t, 0.0))
    times = array("d", [0.0])
    flat = array("l", state.counters())
    for event in events:
        state.apply(event)
        times.append(event.time)
        flat.extend(state.counters())
    counts = np.frombuffer(flat, dtype=f"i{flat.itemsize}").reshape(-1, 6)
    return SamplePath(np.frombuffer(times, dtype=float), counts, config.horizon)


# -- drift --------------------------------------------------------------------


@dataclass(frozen=True)
class DriftEstimate:
    slope: float
    slope_stderr: float
    classification: Classification
    degenerate: bool = False
    replication_slopes: tuple[float, ...] = field(default=(), repr=False)


def classify(slope: float, stderr: float, eps0: float = EPS0) -> Classification:
    bound = 3.0 * stderr + eps0
    if abs(slope) <= bound:
        return Classification.STABLE
    if slope > bound:
        return Classification.UNSTABLE
    return Classification.INCONCLUSIVE


def path_slope(path: SamplePath, metric: str = "total", warmup_fraction: float = WARMUP_FRACTION,
               n_windows: int = N_WINDOWS) -> tuple[float, bool]:
    """Least-squares slope of post-warm-up window means; flags an all-zero path."""
    mids, means = path.window_means(metric, 0.0, path.horizon, n_windows)
    keep = mids >= warmup_fraction * path.horizon
    mids, means = mids[keep], means[keep]
    if not np.any(means):
        return 0.0, True
    slope = np.polyfit(mids, means, 1)[0]
    return float(slope), False


def _drift_job(args) -> tuple[float, bool]:
    config, discipline, seed, metric, warmup_fraction, n_windows = args
    return path_slope(sample_path(config, discipline, seed), metric, warmup_fraction, n_windows)


def estimate_drift(
    config: ScenarioConfig,
    replications: int,
    *,
    discipline: Discipline | str = Discipline.OR,
    metric: str = "total",
    seeds: Sequence[int] | None = None,
    eps0: float = EPS0,
    warmup_fraction: float = WARMUP_FRACTION,
    n_windows: int = N_WINDOWS,
    workers: int | None = 1,
) -> DriftEstimate:
    """Pool per-replication drift slopes into one classified estimate.

    The standard error is taken across replications, which stays honest when the
    window means within a run are autocorrelated.
    """
    if replications < 3:
        raise InvalidParameterError("estimate_drift needs at least 3 replications")
    if n_windows < 50:
        raise InvalidParameterError("at least 50 windows are required")
    if metric not in METRICS:
        raise InvalidParameterError(f"unknown metric {metric!r}")
    if seeds is None:
        seeds = [replication_seed(config.master_seed, r) for r in range(replications)]
    elif len(seeds) != replications:
        raise InvalidParameterError("len(seeds) must equal replications")
    jobs = [(config, Discipline(discipline), s, metric, warmup_fraction, n_windows) for s in seeds]
    results = parallel_map(_drift_job, jobs, workers)
    slopes = [s for s, _ in results]
    if all(degenerate for _, degenerate in results):
        return DriftEstimate(0.0, 0.0, Classification.STABLE, True, tuple(slopes))
    n = len(slopes)
    # fsum keeps the pooled values independent of replication order
    mean = math.fsum(slopes) / n
    var = math.fsum((s - mean) ** 2 for s in slopes) / (n - 1)
    stderr = math.sqrt(var / n)
    return DriftEstimate(mean, stderr, classify(mean, stderr, eps0), False, tuple(slopes))


# -- region sweep -------------------------------------------------------------


@dataclass(frozen=True)
class RegionPoint:
    lambda1: float
    lambda2: float
    inside_theory: bool
    drift: dict[float, DriftEstimate]


def on_boundary(lambda1: float, lambda2: float, mu1: float, mu2: float, tol: float = BOUNDARY_TOL) -> bool:
    return abs(lambda1 + lambda2 - mu1 - mu2) <= tol or abs(lambda2 - mu2) <= tol


def boundary_distance(lambda1: float, lambda2: float, mu1: float, mu2: float) -> float:
    """Euclidean distance in the rate plane to the nearer of the two boundary lines."""
    return min(abs(lambda1 + lambda2 - mu1 - mu2) / math.sqrt(2.0), abs(lambda2 - mu2))


def _sweep_job(args) -> DriftEstimate:
    config, replications, eps0 = args
    return estimate_drift(config, replications, eps0=eps0, workers=1)


def sweep_region(
    grid: Iterable[tuple[float, float]],
    mu1: float,
    mu2: float,
    thresholds: Sequence[float],
    replications: int,
    *,
    horizon: float = 5000.0,
    master_seed: int = 0,
    eps0: float = EPS0,
    workers: int | None = None,
) -> list[RegionPoint]:
    """Classify each ``(lambda1, lambda2)`` point for every threshold in ``thresholds``.

    All points share ``master_seed``, so different thresholds at the same point see
    the same arrival and service streams.
    """
    grid = [(float(a), float(b)) for a, b in grid]
    for l1, l2 in grid:
        if on_boundary(l1, l2, mu1, mu2):
            raise BoundaryPointError(f"({l1}, {l2}) lies on a stability boundary")
    jobs = [
        (ScenarioConfig(l1, l2, mu1, mu2, float(t), horizon, master_seed), replications, eps0)
        for l1, l2 in grid
        for t in thresholds
    ]
    estimates = iter(parallel_map(_sweep_job, jobs, workers))
    return [
        RegionPoint(l1, l2, inside_region(l1, l2, mu1, mu2), {float(t): next(estimates) for t in thresholds})
        for l1, l2 in grid
    ]


REGION_COLUMNS = ("lambda1", "lambda2", "T", "inside_theory", "slope", "slope_stderr", "classification")


def write_region_csv(points: Iterable[RegionPoint], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(REGION_COLUMNS)
    for p in points:
        for t, d in p.drift.items():
            writer.writerow([
                f"{p.lambda1:.12g}", f"{p.lambda2:.12g}", f"{t:.12g}", str(p.inside_theory).lower(),
                f"{d.slope:.12g}", f"{d.slope_stderr:.12g}", d.classification.value,
            ])


# -- distributional checks on the UB system -----------------------------------


@dataclass(frozen=True)
class PastaSummary:
    n_samples: int
    theoretical_mean: float
    mean: float
    stderr: float
    variance: float
    dispersion: float  # variance / mean
    chi2: float
    dof: int
    p_value: float

    @property
    def mean_ok(self) -> bool:
        return abs(self.mean - self.theoretical_mean) <= 3.0 * self.stderr

    @property
    def dispersion_ok(self) -> bool:
        return 0.9 <= self.dispersion <= 1.1

    @property
    def fit_ok(self) -> bool:
        return self.p_value > 0.01

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.dispersion_ok and self.fit_ok


def inspection_times(rate: float, start: float, stop: float, min_gap: float, seed) -> np.ndarray:
    """Poisson inspection epochs in ``[start, stop]``, thinned so kept epochs are ``min_gap`` apart.

    The thinning depends only on the inspection stream, never on the system, and
    samples taken at least ``min_gap = T`` apart see disjoint arrival windows.
    """
    raw = start + sample_poisson_stream(rate, stop - start, seed)
    kept = []
    last = -math.inf
    for t in raw.tolist():
        if t - last >= min_gap:
            kept.append(t)
            last = t
    return np.asarray(kept)


def poisson_chisquare(samples: np.ndarray, mean: float, min_expected: float = 5.0) -> tuple[float, int, float]:
    """Chi-square goodness of fit against Poisson(mean), pooling sparse tail cells."""
    n = samples.size
    top = int(samples.max()) if n else 0
    pmf = stats.poisson.pmf(np.arange(top + 1), mean)
    observed = np.bincount(samples.astype(int), minlength=top + 1).astype(float)
    expected = n * pmf
    # the last cell absorbs the upper tail so expected counts sum to n
    expected[-1] = n * stats.poisson.sf(top - 1, mean) if top > 0 else n
    obs_cells, exp_cells = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            obs_cells.append(acc_o)
            exp_cells.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if exp_cells:
            obs_cells[-1] += acc_o
            exp_cells[-1] += acc_e
        else:
            obs_cells.append(acc_o)
            exp_cells.append(acc_e)
    if len(exp_cells) < 2:
        return 0.0, 0, 1.0
    chi2, p = stats.chisquare(obs_cells, exp_cells)
    return float(chi2), len(exp_cells) - 1, float(p)


def pasta_check(config: ScenarioConfig, sample_count: int, *, warmup: float | None = None) -> PastaSummary:
    """Compare the UB delay-stage occupancy with Poisson(lambda1 * T).

    The UB system is simulated once; the delay-stage count is read at Poisson
    inspection epochs after the warm-up (default: the larger of ``10 T`` and 20% of
    the horizon).
    """
    t = config.threshold_t
    if t <= 0:
        raise InvalidParameterError("pasta_check needs a positive threshold")
    if warmup is None:
        warmup = max(10.0 * t, WARMUP_FRACTION * config.horizon)
    if warmup < 10.0 * t:
        raise InvalidParameterError("warm-up must be at least 10 T")
    path = sample_path(config, Discipline.UB)
    epochs = inspection_times(1.0 / t, warmup, config.horizon, t, substream_seed(config.master_seed, INSPECTION_STREAM))
    if epochs.size < sample_count or sample_count < 2:
        raise InsufficientDataError(f"only {epochs.size} inspection epochs after warm-up; need {sample_count}")
    samples = path.value_at("q1_minus", epochs[:sample_count])
    return summarize_poisson(samples, config.lambda1 * t)


def summarize_poisson(samples: np.ndarray, theoretical_mean: float) -> PastaSummary:
    n = samples.size
    mean = float(samples.mean())
    var = float(samples.var(ddof=1))
    chi2, dof, p = poisson_chisquare(samples, theoretical_mean)
    return PastaSummary(
        n_samples=n,
        theoretical_mean=theoretical_mean,
        mean=mean,
        stderr=math.sqrt(var / n),
        variance=var,
        dispersion=var / mean if mean > 0 else float("nan"),
        chi2=chi2,
        dof=dof,
        p_value=p,
    )


@dataclass(frozen=True)
class MeanCI:
    mean: float
    low: float
    high: float
    replications: tuple[float, ...] = field(repr=False)

    def overlaps(self, other: MeanCI) -> bool:
        return self.low <= other.high and other.low <= self.high


def mean_ci(values: Sequence[float], level: float = 0.95) -> MeanCI:
    values = [float(v) for v in values]
    n = len(values)
    mean = math.fsum(values) / n
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))
    half = float(stats.t.ppf(0.5 + level / 2, n - 1)) * sd / math.sqrt(n)
    return MeanCI(mean, mean - half, mean + half, tuple(values))


@dataclass(frozen=True)
class FcfsEquivalence:
    ub: MeanCI  # time-average of Q1+ + Q2 in the UB system
    fcfs: MeanCI  # time-average waiting-job count in the plain FCFS N-model

    @property
    def overlap(self) -> bool:
        return self.ub.overlaps(self.fcfs)


def _stage2_average(args) -> float:
    config, discipline, seed, metric = args
    path = sample_path(config, discipline, seed)
    return path.time_average(metric, WARMUP_FRACTION * config.horizon)


def fcfs_equivalence_check(config: ScenarioConfig, replications: int, *, workers: int | None = None) -> FcfsEquivalence:
    """Compare the UB second stage with the threshold-free FCFS N-model on independent seeds."""
    if not config.inside_theory:
        raise UnstableParametersError("parameters lie outside the stability region; no stationary mean exists")
    if replications < 2:
        raise InvalidParameterError("need at least 2 replications")
    jobs = [(config, Discipline.UB, replication_seed(config.master_seed, r, 1), "ub_stage2") for r in range(replications)]
    jobs += [(config, Discipline.FCFS, replication_seed(config.master_seed, r, 2), "total") for r in range(replications)]
    values = parallel_map(_stage2_average, jobs, workers)
    return FcfsEquivalence(mean_ci(values[:replications]), mean_ci(values[replications:]))
