"""Distance penalties, per-head slopes and working-memory slope schedules.

Capacity follows the growth curve ``b - a**x``: with ``b = 1`` and the
slope ``m_t = m0 * r**t`` playing the part of ``a**x``, capacity is
``w_t = 1 - m_t``. A large slope means a strong recency bias, i.e. little
usable context.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation

NONE = "none"
STATIC = "static"
LINEAR = "linear"
EXPONENTIAL = "exponential"
REVERSED_EXPONENTIAL = "reversed_exponential"
KINDS = (NONE, STATIC, LINEAR, EXPONENTIAL, REVERSED_EXPONENTIAL)


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str
    m0: float = 1.0
    r: float = 0.6
    horizon: int = 10
    uniform_slope: bool = False
    snap_final_to_zero: bool = False

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.kind not in KINDS:
            out.append(f"unknown schedule kind {self.kind!r} (expected one of {', '.join(KINDS)})")
        if not 0.0 <= self.m0 <= 1.0:
            out.append(f"m0 out of [0,1]: {self.m0}")
        if not self.r > 0:
            out.append(f"r must be positive: {self.r}")
        elif self.kind == EXPONENTIAL and self.r > 1:
            out.append(f"exponential schedule needs r <= 1 (got {self.r}); use reversed_exponential")
        elif self.kind == REVERSED_EXPONENTIAL and self.r < 1:
            out.append(f"reversed_exponential schedule needs r >= 1 (got {self.r})")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            out.append(f"horizon must be a positive integer: {self.horizon}")
        return out

    @property
    def has_bias(self) -> bool:
        return self.kind != NONE


@dataclass(frozen=True)
class BiasMatrix:
    """Causal distance penalties; ``penalties[i, j] = -(i - j)`` for ``j <= i``, -inf above."""

    penalties: np.ndarray

    @property
    def seq_len(self) -> int:
        return self.penalties.shape[0]


def head_slopes(n_heads: int) -> list[float]:
    """Geometric base slopes ``ratio**h`` with ``ratio = 2**(-8 / n_heads)``."""
    if n_heads < 1:
        raise ConfigError(f"n_heads must be >= 1, got {n_heads}")
    ratio = 2.0 ** (-8.0 / n_heads)
    return [ratio**h for h in range(n_heads)]


def bias_matrix(seq_len: int) -> BiasMatrix:
    if seq_len < 1:
        raise ConfigError(f"seq_len must be >= 1, got {seq_len}")
    pos = np.arange(seq_len, dtype=np.float64)
    dist = pos[None, :] - pos[:, None]  # j - i
    penalties = np.where(dist <= 0, dist, -np.inf)
    penalties.setflags(write=False)
    return BiasMatrix(penalties)


def schedule_slope(spec: ScheduleSpec, t: int) -> float:
    """Slope applied during epoch ``t`` (0-based), clamped to [0, 1]."""
    if t < 0:
        raise ContractViolation(f"epoch must be >= 0, got {t}")
    if spec.kind == NONE:
        raise ContractViolation("schedule kind 'none' has no slope")
    t = min(t, spec.horizon)
    if spec.kind == STATIC:
        m = spec.m0
    elif spec.kind == LINEAR:
        m = spec.m0 * (1.0 - t / spec.horizon)
    else:
        if spec.snap_final_to_zero and spec.kind == EXPONENTIAL and t == spec.horizon:
            return 0.0
        m = spec.m0 * spec.r**t
    return min(max(m, 0.0), 1.0)


def working_memory(m: float) -> float:
    if not 0.0 <= m <= 1.0 or math.isnan(m):
        raise ContractViolation(f"slope must lie in [0,1], got {m}")
    return 1.0 - m


def capacity_curve(spec: ScheduleSpec) -> list[tuple[int, float]]:
    """``(t, w_t)`` for ``t = 0..horizon``; kind 'none' has full capacity throughout."""
    if spec.kind == NONE:
        return [(t, 1.0) for t in range(spec.horizon + 1)]
    return [(t, working_memory(schedule_slope(spec, t))) for t in range(spec.horizon + 1)]


def effective_slopes(spec: ScheduleSpec, t: int, n_heads: int) -> list[float] | None:
    """Per-head slopes in effect during epoch ``t``, or None when the bias is absent.

    The schedule value scales each head's geometric base slope, so a static
    schedule with ``m0 = 1`` reproduces plain ALiBi; ``uniform_slope``
    applies the schedule value to every head unchanged.
    """
    if spec.kind == NONE:
        return None
    m = schedule_slope(spec, t)
    if spec.uniform_slope:
        return [m] * n_heads
    return [base * m for base in head_slopes(n_heads)]


def write_capacity_csv(spec: ScheduleSpec, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "m", "w"])
        for t in range(spec.horizon + 1):
            m = 0.0 if spec.kind == NONE else schedule_slope(spec, t)
            writer.writerow([t, repr(m), repr(working_memory(m))])
