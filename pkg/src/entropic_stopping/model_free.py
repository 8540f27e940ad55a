"""Sample-based policy iteration and zeroth-order learning of the boundary floor.

Everything here works from simulated rewards only: the update logic never
touches drift, volatility, discount or profit parameters.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .boundary import (BoundaryError, GridBoundary, isotonic_project, l1_distance, make_grid,
                       sup_distance)
from .simulator import PathConfig
from .trace import IterationTrace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpiConfig:
    delta_x: float = 0.02
    delta_y: float = 0.02
    x_bar: float = 5.0
    M: int = 20
    K: int = 30
    path_cfg: PathConfig = field(default_factory=PathConfig)
    tol: float = 0.0  # early stop on successive L1; 0 runs all K rounds
    x_scheme: str = "central"  # or "forward"
    z_trigger: float = 0.0  # move a column only if its boundary-row t-statistic is below -z_trigger
    resample: bool = True  # fresh paths every outer iteration; False reuses the k = 0 ensemble
    confirm_rows: int = 1  # rows from the boundary row down that must all show a negative difference

    def __post_init__(self):
        if not (self.delta_x > 0 and self.delta_y > 0 and self.x_bar > 0):
            raise BoundaryError("grid steps and x_bar must be positive")
        if self.M < 1 or self.K < 0:
            raise BoundaryError("M must be positive and K nonnegative")
        make_grid(self.x_bar, self.delta_x)
        if self.n_y < 2:
            raise BoundaryError("delta_y too large")
        if self.x_scheme not in ("central", "forward"):
            raise BoundaryError("x_scheme must be 'central' or 'forward'")

    @property
    def n_y(self) -> int:
        return int(math.floor(1.0 / self.delta_y + 1e-9)) + 1

    def x_grid(self) -> np.ndarray:
        return make_grid(self.x_bar, self.delta_x)

    def y_grid(self) -> np.ndarray:
        return np.arange(self.n_y) * self.delta_y


@dataclass(frozen=True)
class ZeroOrderConfig:
    y0: float = 0.5
    c0: float = 0.1
    eta: float = 0.05
    max_iters: int = 500
    M_inner: int = 256
    margin: float = 1e-6
    max_clamped: int = 10

    def __post_init__(self):
        if not 0 < self.y0 < 1:
            raise ValueError("y0 must lie in (0, 1)")
        if not (self.c0 > 0 and self.eta > 0 and self.max_iters > 0 and self.M_inner > 0):
            raise ValueError("c0, eta, max_iters and M_inner must be positive")


class FloorDivergence(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass
class FloorResult:
    y: float
    trace: list  # rows (i, y_i, estimate, eps_i)


def never_stop_boundary() -> GridBoundary:
    return GridBoundary(np.array([0.0, 1.0]), np.array([1.0, 1.0]))


def learn_y_floor(cfg: ZeroOrderConfig, sim=None, objective: Callable[[float], float] = None) -> FloorResult:
    """Two-point zeroth-order ascent on y -> J(0, y) under the never-stop policy.

    ``objective`` replaces the simulator (noiseless mode). The iterate is kept
    inside [margin, 1 - margin]; hitting that clamp ``max_clamped`` times in a
    row aborts with the trace attached.
    """
    if objective is None:
        if sim is None:
            raise ValueError("need a simulator or an objective")
        g1 = never_stop_boundary()
        objective = lambda y, key: sim.mc_value(0.0, y, g1, cfg.M_inner, key)[0]
    else:
        f = objective
        objective = lambda y, key: f(y)
    lo, hi = cfg.margin, 1.0 - cfg.margin
    y = cfg.y0
    rows, clamped = [], 0
    for i in range(1, cfg.max_iters + 1):
        eps = min(y, 1.0 - y, cfg.c0 / i)
        up = objective(min(y + eps, 1.0), (3, i, 1))
        dn = objective(max(y - eps, 0.0), (3, i, 0))
        grad = (up - dn) / (2.0 * eps)
        rows.append((i, y, grad, eps))
        step = y + cfg.eta / math.sqrt(i) * grad
        y = min(max(step, lo), hi)
        clamped = clamped + 1 if y != step else 0
        if clamped >= cfg.max_clamped:
            raise FloorDivergence(f"iterate pinned at the clamp for {clamped} steps (i={i})", rows)
    return FloorResult(y, rows)


@dataclass
class ValueTable:
    xs: np.ndarray
    ys: np.ndarray
    u: np.ndarray
    stderr: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None  # per-path rewards, shape (M, nx, ny)

    def to_csv(self, path) -> None:
        se = self.stderr if self.stderr is not None else np.full_like(self.u, np.nan)
        with open(path, "w") as fh:
            fh.write("x,y,u_bar,stderr\n")
            for i, x in enumerate(self.xs):
                for j, y in enumerate(self.ys):
                    fh.write(f"{x:.17g},{y:.17g},{self.u[i, j]:.17g},{se[i, j]:.17g}\n")


def estimate_value_grid(g: GridBoundary, cfg: SpiConfig, sim, k: int = 0) -> ValueTable:
    xs, ys = cfg.x_grid(), cfg.y_grid()
    r = sim.value_samples(xs, ys, g, cfg.M, k if cfg.resample else 0)
    se = r.std(axis=0, ddof=1) / math.sqrt(cfg.M) if cfg.M > 1 else None
    return ValueTable(xs, ys, r.mean(axis=0), se, r)


def _x_difference(u: np.ndarray, dx: float, scheme: str = "central") -> np.ndarray:
    """x-difference along axis -2; second-order backward at the last column, NaN at x = 0."""
    u = np.moveaxis(u, -2, 0)
    d = np.full_like(u, np.nan)
    if scheme == "forward":
        d[1:-2] = (-3.0 * u[1:-2] + 4.0 * u[2:-1] - u[3:]) / (2.0 * dx)
        d[-2] = (u[-1] - u[-2]) / dx
    else:
        d[1:-1] = (u[2:] - u[:-2]) / (2.0 * dx)
    if u.shape[0] >= 3:
        d[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * dx)
    return np.moveaxis(d, 0, -2)


def _mixed(u: np.ndarray, dx: float, dy: float, scheme: str) -> np.ndarray:
    ux = _x_difference(u, dx, scheme)
    out = np.full_like(ux, np.nan)
    out[..., 1:] = (ux[..., 1:] - ux[..., :-1]) / dy
    return out


def mixed_difference_field(table: ValueTable, scheme: str = "central") -> np.ndarray:
    """D[i, j] = (Dx u(i, j) - Dx u(i, j-1)) / dy; NaN on the x = 0 column and the j = 0 row."""
    dx = table.xs[1] - table.xs[0]
    dy = table.ys[1] - table.ys[0]
    return _mixed(table.u, dx, dy, scheme)


def mixed_difference_stderr(table: ValueTable, scheme: str = "central") -> Optional[np.ndarray]:
    """Standard error of D from the per-path differences; None without samples."""
    if table.samples is None or table.samples.shape[0] < 2:
        return None
    dx = table.xs[1] - table.xs[0]
    dy = table.ys[1] - table.ys[0]
    d = _mixed(table.samples, dx, dy, scheme)
    return d.std(axis=0, ddof=1) / math.sqrt(d.shape[0])


def mixed_difference(table: ValueTable, i: int, j: int) -> float:
    n, m = table.u.shape
    if not (1 <= i <= n - 2 and 1 <= j <= m - 1):
        raise IndexError(f"mixed difference needs an interior column and j >= 1, got ({i}, {j})")
    dx = table.xs[1] - table.xs[0]
    dy = table.ys[1] - table.ys[0]
    u = table.u
    return float(((u[i + 1, j] - u[i - 1, j]) - (u[i + 1, j - 1] - u[i - 1, j - 1])) / (2.0 * dx * dy))


def _column_update(D: np.ndarray, ys: np.ndarray, gx: float, floor: float, trigger: float = 0.0,
                   confirm: int = 1):
    """Zero crossing of the column's mixed difference below g(x); (level, flagged)."""
    dy = ys[1] - ys[0]
    jb = min(int(math.ceil(gx / dy - 1e-9)), len(ys) - 1)
    if jb < 1 or not D[jb] < -trigger:
        return gx, False
    if confirm > 1 and not np.all(D[max(jb - confirm + 1, 1):jb] < 0):
        return gx, False
    mids = ys - 0.5 * dy  # D[j] sits between rows j-1 and j
    for j in range(jb - 1, 0, -1):
        if D[j] >= 0:
            t = D[j] / (D[j] - D[j + 1])
            return float(mids[j] + t * dy), False
    # no crossing resolvable on the grid: stop at the lowest positive row
    return max(floor, float(ys[1])), True


def spi_update(g: GridBoundary, table: ValueTable, cfg: SpiConfig, floor: float):
    """Sample-based boundary update on the x-grid; returns (new boundary, flagged columns)."""
    if g.knots.shape != table.xs.shape or np.any(np.abs(g.knots - table.xs) > 1e-12):
        raise BoundaryError("boundary knots must coincide with the x-grid")
    D = mixed_difference_field(table, cfg.x_scheme)
    trig = np.zeros_like(D)
    if cfg.z_trigger > 0:
        se = mixed_difference_stderr(table, cfg.x_scheme)
        if se is not None:
            trig = cfg.z_trigger * np.nan_to_num(se)
    new = g.values.copy()
    flagged = []
    for i in range(1, len(g.knots)):
        jb = min(int(math.ceil(g.values[i] / (table.ys[1] - table.ys[0]) - 1e-9)), len(table.ys) - 1)
        new[i], flag = _column_update(D[i], table.ys, float(g.values[i]), floor, float(trig[i, jb]),
                                     cfg.confirm_rows)
        if flag:
            flagged.append(i)
    new[0] = floor
    new = isotonic_project(new)
    new = np.clip(np.minimum(new, g.values), floor, 1.0)
    return g.with_values(new), flagged


def run_spi(g0: GridBoundary, cfg: SpiConfig, sim=None, ground_truth: GridBoundary = None,
            floor: float = None, estimator: Callable = None, keep_tables: bool = False) -> IterationTrace:
    """K rounds of value estimation and boundary update.

    ``floor`` is the x = 0 pin (learned or known); default g0(0).
    ``estimator(g, k) -> ValueTable`` replaces the simulator, e.g. to feed an
    exact value table.
    """
    if estimator is None:
        if sim is None:
            raise ValueError("need a simulator or an estimator")
        estimator = lambda g, k: estimate_value_grid(g, cfg, sim, k)
    floor = g0.floor if floor is None else float(floor)
    if abs(g0.floor - floor) > 0:
        vals = g0.values.copy()
        vals[0] = floor
        g0 = g0.with_values(np.maximum.accumulate(vals))
    trace = IterationTrace()
    g = g0
    trace.iterates.append(g)
    if ground_truth is not None:
        trace.l1_errors.append(l1_distance(g, ground_truth))
    for k in range(cfg.K):
        t0 = time.perf_counter()
        table = estimator(g, k)
        g_new, flagged = spi_update(g, table, cfg, floor)
        trace.wall_times.append(time.perf_counter() - t0)
        trace.flagged_knots.append(flagged)
        if keep_tables:
            trace.tables.append(table)
        trace.iterates.append(g_new)
        trace.l1_steps.append(l1_distance(g, g_new))
        trace.sup_steps.append(sup_distance(g, g_new))
        if ground_truth is not None:
            trace.l1_errors.append(l1_distance(g_new, ground_truth))
        log.debug("SPI k=%d l1_step=%.3e", k, trace.l1_steps[-1])
        g = g_new
        if cfg.tol > 0 and trace.l1_steps[-1] < cfg.tol:
            break
    return trace
