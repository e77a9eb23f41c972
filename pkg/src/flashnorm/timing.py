"""Cycle-level model of one vector unit (m ops/cycle) and one matrix unit (m*m ops/cycle).

The workload is normalizing an n-element vector and multiplying it by an
n x n matrix. Work is issued in chunks of m elements:

* the RMS reduction takes one vector cycle per input chunk (n/m cycles)
* scaling a vector takes one vector cycle per chunk (n/m cycles)
* the matrix-vector product takes n/m cycles per input chunk (row-major) or
  per output chunk (column-major), n*n/(m*m) cycles in total

Schedules:

``sequential``
    RMS, then scaling, then the matrix product.
``interleaved``
    RMS, then scaling streamed chunk by chunk; the row-major product starts
    on an input chunk the cycle after that chunk has been scaled.
``deferred``
    The column-major product starts at cycle 0 on the raw input while the
    vector unit computes the RMS; each output chunk is scaled on the vector
    unit once the RMS is known, at the earliest in the cycle its last
    accumulation retires (results are chained straight into the scaler).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass


class Schedule(str, enum.Enum):
    SEQUENTIAL = "sequential"
    INTERLEAVED = "interleaved"
    DEFERRED = "deferred"


class Activity(str, enum.Enum):
    IDLE = "Idle"
    RMS_CALC = "RmsCalc"
    SCALE = "Scale"
    MATMUL = "MatMul"


_GLYPH = {Activity.IDLE: ".", Activity.RMS_CALC: "R", Activity.SCALE: "S", Activity.MATMUL: "M"}


@dataclass(frozen=True)
class TimingParams:
    n: int
    m: int
    schedule: Schedule = Schedule.SEQUENTIAL

    def __post_init__(self):
        object.__setattr__(self, "schedule", Schedule(self.schedule))
        if self.n < 1 or self.m < 1:
            raise ValueError(f"n and m must be positive, got n={self.n}, m={self.m}")
        if self.n % self.m:
            raise ValueError(f"processor width m={self.m} must divide n={self.n}")


@dataclass(frozen=True)
class TimingTrace:
    params: TimingParams
    vector_unit: tuple[Activity, ...]
    matrix_unit: tuple[Activity, ...]
    matrix_start_cycle: int

    @property
    def total_cycles(self) -> int:
        return len(self.vector_unit)

    def cycles(self, unit: str, activity: Activity) -> int:
        return sum(a is activity for a in getattr(self, unit))

    def to_dict(self) -> dict:
        return {
            "n": self.params.n,
            "m": self.params.m,
            "schedule": self.params.schedule.value,
            "total_cycles": self.total_cycles,
            "matrix_start_cycle": self.matrix_start_cycle,
            "vector_unit": [a.value for a in self.vector_unit],
            "matrix_unit": [a.value for a in self.matrix_unit],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def render(self) -> str:
        """One row per unit, one column per cycle (R=RmsCalc, S=Scale, M=MatMul, .=Idle)."""
        width = len(str(self.total_cycles - 1))
        header = "cycle  " + " ".join(str(c).rjust(width) for c in range(self.total_cycles))
        rows = [header]
        for label, unit in (("vector", self.vector_unit), ("matrix", self.matrix_unit)):
            cells = " ".join(_GLYPH[a].rjust(width) for a in unit)
            rows.append(f"{label} {cells}")
        return "\n".join(rows)


class _Unit:
    def __init__(self, name: str):
        self.name = name
        self.busy: dict[int, Activity] = {}

    def run(self, start: int, cycles: int, activity: Activity) -> int:
        """Occupy ``cycles`` consecutive cycles from ``start``; return the first free cycle after."""
        for c in range(start, start + cycles):
            if c in self.busy:
                raise RuntimeError(f"{self.name} unit double-booked at cycle {c}")
            self.busy[c] = activity
        return start + cycles

    def timeline(self, total: int) -> tuple[Activity, ...]:
        return tuple(self.busy.get(c, Activity.IDLE) for c in range(total))


def simulate(p: TimingParams) -> TimingTrace:
    chunks = p.n // p.m
    per_chunk = p.n // p.m
    vec, mat = _Unit("vector"), _Unit("matrix")

    rms_done = vec.run(0, chunks, Activity.RMS_CALC)
    if p.schedule is Schedule.SEQUENTIAL:
        scaled = vec.run(rms_done, chunks, Activity.SCALE)
        matrix_start = scaled
        mat.run(matrix_start, chunks * per_chunk, Activity.MATMUL)
    elif p.schedule is Schedule.INTERLEAVED:
        free = 0
        matrix_start = None
        for j in range(chunks):
            # chunk j is scaled during cycle rms_done + j and usable from the next cycle
            ready = vec.run(rms_done + j, 1, Activity.SCALE)
            start = max(free, ready)
            matrix_start = start if matrix_start is None else matrix_start
            free = mat.run(start, per_chunk, Activity.MATMUL)
    else:
        matrix_start = 0
        free = 0
        scale_free = rms_done
        for j in range(chunks):
            free = mat.run(free, per_chunk, Activity.MATMUL)
            start = max(scale_free, free - 1)
            scale_free = vec.run(start, 1, Activity.SCALE)

    total = max(max(vec.busy) + 1, max(mat.busy) + 1)
    return TimingTrace(p, vec.timeline(total), mat.timeline(total), matrix_start)


def speedup(p_base: TimingParams, p_opt: TimingParams) -> float:
    if (p_base.n, p_base.m) != (p_opt.n, p_opt.m):
        raise ValueError("speedup compares schedules of the same (n, m)")
    return simulate(p_base).total_cycles / simulate(p_opt).total_cycles
