"""Model-based policy iteration for the reflection boundary."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .boundary import (GridBoundary, active_knots, coverage_margin, l1_distance, sup_distance,
                       validate_initial, y_floor)
from .model import ModelError, ModelParams, ProfitModel, resolvent_derivative
from .policy_eval import SemiAnalyticValue, evaluate_policy
from .trace import IterationTrace

log = logging.getLogger(__name__)

SCAN_STEP = 0.002


class InitializationError(ModelError):
    """The starting boundary violates the conditions policy iteration relies on."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class ConditionRecord:
    increasing: bool          # (a)
    floor_ok: bool            # (b)
    covers_optimal: bool      # (c)
    mixed_nonpositive: bool   # (d)
    slope_variation: float    # (e) proxy, reported only

    @property
    def ok(self) -> bool:
        return self.increasing and self.floor_ok and self.covers_optimal and self.mixed_nonpositive

    def as_dict(self) -> dict:
        return {"a": self.increasing, "b": self.floor_ok, "c": self.covers_optimal,
                "d": self.mixed_nonpositive, "e_slope_variation": self.slope_variation}


def check_iteration_conditions(g: GridBoundary, v: Optional[SemiAnalyticValue], params: ModelParams,
                               profit: ProfitModel, tol: float = 1e-9) -> ConditionRecord:
    mask = active_knots(g)
    vals = g.values[mask]
    inc = bool(vals.size < 2 or np.all(np.diff(vals) > 0))
    floor_ok = abs(g.floor - y_floor(params)) <= 1e-10
    margin = coverage_margin(g, params, profit)[mask]
    scale = max(1.0, float(np.max(np.abs(margin)))) if margin.size else 1.0
    covers = bool(np.all(margin >= -tol * scale))
    if v is None:
        v = evaluate_policy(g, params, profit)
    xs = g.knots[mask & (g.knots > 0)]
    if xs.size:
        d = v.value_dxy(xs, g.eval(xs))
        scale = np.maximum(1.0, np.abs(resolvent_derivative(profit, params, xs)))
        mixed = bool(np.all(d <= tol * scale))
    else:
        mixed = True
    slopes = np.diff(g.values) / np.diff(g.knots)
    variation = float(np.max(np.abs(np.diff(slopes)))) if slopes.size > 1 else 0.0
    return ConditionRecord(inc, floor_ok, covers, mixed, variation)


def _update_knot(v: SemiAnalyticValue, x: float, gx: float, lower: float, knot_levels: np.ndarray,
                 scan_step: float):
    """Largest y < g(x) with u_xy(x, y) = 0; (new level, flagged)."""
    f = lambda y: float(v.value_dxy(x, y))
    top = f(gx)
    if not top < 0:
        return gx, False
    grid = np.arange(gx, lower, -scan_step)[1:]
    cand = np.union1d(grid, knot_levels[(knot_levels < gx) & (knot_levels >= lower)])[::-1]
    cand = np.append(cand, lower) if (cand.size == 0 or cand[-1] > lower) else cand
    hi, fhi = gx, top
    for y in cand:
        fy = f(y)
        if fy >= 0:
            if fy == 0:
                return float(y), False
            return brentq(f, y, hi, xtol=1e-12, rtol=1e-10), False
        hi, fhi = y, fy
    return float(lower), True


def update_boundary(v: SemiAnalyticValue, g: GridBoundary = None, scan_step: float = SCAN_STEP,
                    floor: float = None):
    """One improvement step; returns (new boundary, flagged knot indices).

    The knot at 0 is pinned to ``floor`` (default: the optimal floor). Knots where
    the mixed derivative is negative at the boundary but no zero exists above
    the floor are set to the floor and flagged.
    """
    g = g or v.g
    floor = y_floor(v.params) if floor is None else floor
    new = g.values.copy()
    flagged = []
    levels = np.unique(g.values)
    for i in range(1, len(g.knots)):
        x, gx = float(g.knots[i]), float(g.values[i])
        new[i], flag = _update_knot(v, x, gx, max(floor, g.floor), levels, scan_step)
        if flag:
            flagged.append(i)
    new[0] = floor
    new = np.minimum(new, g.values)  # roundoff guard: the update never raises a knot
    new = np.maximum.accumulate(new)
    return g.with_values(new), flagged


def _sample_grid(g: GridBoundary, nx: int = 20, ny: int = 10):
    xs = np.linspace(g.x_bar / nx, g.x_bar, nx)
    ys = np.linspace(1.0 / ny, 1.0, ny)
    return np.meshgrid(xs, ys, indexing="ij")


def run_pi(g0: GridBoundary, params: ModelParams, profit: ProfitModel, K: int = 30, tol: float = 1e-6,
           ground_truth: GridBoundary = None, strict: bool = True, check_improvement: bool = True,
           improvement_tol: float = 1e-8, scan_step: float = SCAN_STEP) -> IterationTrace:
    """Alternate policy evaluation and boundary update for up to K rounds.

    Stops early once the L1 distance between successive iterates drops below ``tol``.
    """
    if strict:
        report = validate_initial(g0, params, profit)
        if not report.ok:
            raise InitializationError(report.violations)
    trace = IterationTrace()
    g = g0
    trace.iterates.append(g)
    if ground_truth is not None:
        trace.l1_errors.append(l1_distance(g, ground_truth))
    X, Y = _sample_grid(g0)
    v = evaluate_policy(g, params, profit)
    trace.condition_flags.append(check_iteration_conditions(g, v, params, profit))
    for k in range(K):
        t0 = time.perf_counter()
        try:
            g_new, flagged = update_boundary(v, g, scan_step)
            v_new = evaluate_policy(g_new, params, profit)
        except Exception as exc:  # surface the failing round
            raise RuntimeError(f"policy iteration failed at k={k}: {exc}") from exc
        trace.wall_times.append(time.perf_counter() - t0)
        trace.flagged_knots.append(flagged)
        if check_improvement:
            gain = v_new.value(X, Y) - v.value(X, Y)
            trace.improvement_ok.append(bool(np.all(gain >= -improvement_tol)))
        trace.iterates.append(g_new)
        trace.l1_steps.append(l1_distance(g, g_new))
        trace.sup_steps.append(sup_distance(g, g_new))
        if ground_truth is not None:
            trace.l1_errors.append(l1_distance(g_new, ground_truth))
        trace.condition_flags.append(check_iteration_conditions(g_new, v_new, params, profit))
        log.debug("PI k=%d l1_step=%.3e", k, trace.l1_steps[-1])
        g, v = g_new, v_new
        if trace.l1_steps[-1] < tol:
            break
    return trace
