"""Per-iteration records shared by the model-based and sample-based iterations."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from .boundary import GridBoundary

TRACE_COLUMNS = ("iter", "l1_to_truth", "l1_step", "sup_step", "improvement_ok")
TIMING_COLUMNS = ("iter", "seconds")


@dataclass
class IterationTrace:
    iterates: list = field(default_factory=list)
    l1_errors: list = field(default_factory=list)
    l1_steps: list = field(default_factory=list)
    sup_steps: list = field(default_factory=list)
    improvement_ok: list = field(default_factory=list)
    condition_flags: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    flagged_knots: list = field(default_factory=list)
    tables: list = field(default_factory=list)

    @property
    def final(self) -> GridBoundary:
        return self.iterates[-1]

    def rows(self):
        """One row per outer iteration k >= 1 (iterate k against k-1)."""
        for k in range(1, len(self.iterates)):
            yield {
                "iter": k,
                "l1_to_truth": self.l1_errors[k] if self.l1_errors else math.nan,
                "l1_step": self.l1_steps[k - 1],
                "sup_step": self.sup_steps[k - 1],
                "improvement_ok": self.improvement_ok[k - 1] if self.improvement_ok else True,
                "seconds": self.wall_times[k - 1],
            }


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_trace_csv(path, trace: IterationTrace, columns=TRACE_COLUMNS) -> None:
    """Write one row per iteration; wall-clock seconds go in a separate file by default."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in trace.rows():
            w.writerow([_fmt(row[c]) for c in columns])


def write_timing_csv(path, trace: IterationTrace) -> None:
    write_trace_csv(path, trace, TIMING_COLUMNS)
