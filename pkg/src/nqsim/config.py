"""Scenario parameters for N-model runs."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .errors import InvalidParameterError


class Discipline(str, enum.Enum):
    OR = "OR"
    UB = "UB"
    FCFS = "FCFS"
    X_OR = "X_OR"
    X_UB = "X_UB"
    X_FCFS = "X_FCFS"


def _check_rate(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise InvalidParameterError(f"{name} must be a finite positive rate, got {value!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    lambda1: float
    lambda2: float
    mu1: float
    mu2: float
    threshold_t: float
    horizon: float
    master_seed: int = 0
    disciplines: tuple[Discipline, ...] = (Discipline.OR, Discipline.UB)

    def __post_init__(self) -> None:
        for name in ("lambda1", "lambda2", "mu1", "mu2"):
            _check_rate(name, getattr(self, name))
        if not (math.isfinite(self.threshold_t) and self.threshold_t >= 0):
            raise InvalidParameterError(f"threshold_t must be >= 0, got {self.threshold_t!r}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise InvalidParameterError(f"horizon must be > 0, got {self.horizon!r}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise InvalidParameterError("master_seed must fit in an unsigned 64-bit integer")
        discs = tuple(Discipline(d) for d in self.disciplines)
        object.__setattr__(self, "disciplines", discs)
        if self.threshold_t == 0 and any(d is not Discipline.FCFS for d in discs):
            raise InvalidParameterError("threshold_t = 0 is only valid for the FCFS discipline")

    @property
    def inside_theory(self) -> bool:
        return inside_region(self.lambda1, self.lambda2, self.mu1, self.mu2)

    def with_(self, **changes) -> ScenarioConfig:
        return replace(self, **changes)


def inside_region(lambda1: float, lambda2: float, mu1: float, mu2: float) -> bool:
    """Strict membership in the stability region: total load and server-2 load below capacity."""
    return (lambda1 + lambda2 < mu1 + mu2) and (lambda2 < mu2)
