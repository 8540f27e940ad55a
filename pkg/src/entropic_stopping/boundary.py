"""Grid representation of reflection boundaries g: [0, x_bar] -> (0, 1]."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (CharacteristicRoots, ModelError, ModelParams, PowerProfit, ProfitModel,
                    ValidationReport, boundary_lhs, characteristic_roots, power_constant)


class BoundaryError(ValueError):
    pass


def make_grid(x_bar: float = 5.0, delta_x: float = 0.02) -> np.ndarray:
    n = int(round(x_bar / delta_x))
    if n <= 0 or not math.isclose(n * delta_x, x_bar, rel_tol=1e-9):
        raise BoundaryError(f"x_bar={x_bar} is not a multiple of delta_x={delta_x}")
    return np.linspace(0.0, x_bar, n + 1)


@dataclass(frozen=True, eq=False)
class GridBoundary:
    """Nondecreasing piecewise-linear boundary on fixed knots.

    Evaluation beyond the last knot clamps to the last value.
    """

    knots: np.ndarray
    values: np.ndarray
    x_hat: float = field(init=False)

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        values = np.array(self.values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
            raise BoundaryError("knots and values must be 1-d arrays of equal length >= 2")
        if knots[0] != 0.0 or np.any(np.diff(knots) <= 0):
            raise BoundaryError("knots must start at 0 and increase strictly")
        if np.any(np.diff(values) < 0):
            raise BoundaryError("boundary values must be nondecreasing")
        if values[0] <= 0 or values[-1] > 1:
            raise BoundaryError("boundary values must lie in (0, 1]")
        knots.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        top = np.flatnonzero(values >= 1.0)
        object.__setattr__(self, "x_hat", float(knots[top[0]]) if top.size else math.inf)

    @property
    def floor(self) -> float:
        return float(self.values[0])

    @property
    def x_bar(self) -> float:
        return float(self.knots[-1])

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        out = np.interp(x, self.knots, self.values)
        return out if np.ndim(out) else float(out)

    def inverse(self, y):
        """Smallest x with g(x) >= y.

        Levels above the top value map to +inf; levels below the floor raise.
        """
        y = np.asarray(y, dtype=float)
        if np.any(y < self.values[0]):
            raise BoundaryError("below boundary floor")
        out = self._inverse(y)
        return out if out.ndim else float(out)

    def _inverse(self, y, below=0.0):
        y = np.asarray(y, dtype=float)
        k, v = self.knots, self.values
        j = np.searchsorted(v, y, side="left")
        jc = np.clip(j, 1, len(v) - 1)
        v0, v1 = v[jc - 1], v[jc]
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(v1 > v0, (y - v0) / (v1 - v0), 1.0)
        x = k[jc - 1] + t * (k[jc] - k[jc - 1])
        x = np.where(j == 0, 0.0, x)
        x = np.where(y == v[j.clip(max=len(v) - 1)], k[j.clip(max=len(v) - 1)], x)
        x = np.where(j >= len(v), np.inf, x)
        x = np.where(y < v[0], below, x)
        return x

    def with_values(self, values) -> "GridBoundary":
        return GridBoundary(self.knots, values)

    def to_csv(self, path) -> None:
        write_boundary_csv(path, self)


def write_boundary_csv(path, g: GridBoundary) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "g"])
        for x, v in zip(g.knots, g.values):
            w.writerow([f"{x:.17g}", f"{v:.17g}"])


def read_boundary_csv(path) -> GridBoundary:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"x", "g"}:
        raise BoundaryError(f"{path}: expected header x,g")
    return GridBoundary(np.array([float(r["x"]) for r in rows]),
                        np.array([float(r["g"]) for r in rows]))


def from_function(knots, fn) -> GridBoundary:
    knots = np.asarray(knots, dtype=float)
    vals = np.minimum(np.asarray(fn(knots), dtype=float), 1.0)
    return GridBoundary(knots, vals)


def y_floor(params: ModelParams) -> float:
    """exp(-1 - kappa rho / lambda): the level at x = 0 of the optimal boundary."""
    if params.lam <= 0:
        raise ModelError("the boundary floor needs lambda > 0")
    return math.exp(-1.0 - params.kappa * params.rho / params.lam)


def init_exponential(params: ModelParams, profit: ProfitModel, zeta: float, knots,
                     resolvent_scaled: bool = False) -> GridBoundary:
    """Exponential initial boundary min{exp(rho (zeta-a) x^zeta / (-a lam) - (rho/lam)(kappa + lam/rho)), 1}.

    ``resolvent_scaled`` multiplies the x**zeta term by P c, the factor that
    distinguishes the exponent of the optimal boundary from the unscaled form.
    """
    if not isinstance(profit, PowerProfit):
        raise ModelError("exponential initialization is defined for power profits")
    if not profit.theta < zeta < 1:
        raise ModelError(f"zeta must lie in (theta, 1) = ({profit.theta}, 1)")
    am = characteristic_roots(params).alpha_minus
    lam, rho, kappa = params.lam, params.rho, params.kappa
    scale = profit.c * power_constant(params, profit) if resolvent_scaled else 1.0
    knots = np.asarray(knots, dtype=float)
    expo = rho * scale * (zeta - am) * knots ** zeta / (-am * lam) - (rho / lam) * (kappa + lam / rho)
    return GridBoundary(knots, np.minimum(np.exp(expo), 1.0))


def linear_breakpoint(params: ModelParams, profit: PowerProfit) -> float:
    """x_1 = (1/2) (-a (kappa + lam/rho) / (theta - a))^(-theta)."""
    am = characteristic_roots(params).alpha_minus
    th = profit.theta
    base = -am * (params.kappa + params.lam / params.rho) / (th - am)
    return 0.5 * base ** (-th)


def init_linear(params: ModelParams, profit: ProfitModel, knots) -> GridBoundary:
    if not isinstance(profit, PowerProfit):
        raise ModelError("linear initialization is defined for power profits")
    y0 = y_floor(params)
    x1 = linear_breakpoint(params, profit)
    knots = np.asarray(knots, dtype=float)
    return GridBoundary(knots, np.minimum(y0 + (1.0 - y0) * knots / x1, 1.0))


def coverage_margin(g: GridBoundary, params: ModelParams, profit: ProfitModel,
                    roots: CharacteristicRoots = None) -> np.ndarray:
    """-a (kappa + (lam/rho) log g + lam/rho) + a H(x) - x H'(x) at the knots.

    Nonnegative exactly where g lies on or above the optimal boundary.
    """
    roots = roots or characteristic_roots(params)
    am = roots.alpha_minus
    x = g.knots
    lhs = np.asarray(boundary_lhs(profit, params, x, roots))
    level = params.kappa + params.temperature_ratio * (np.log(g.values) + 1.0)
    # -a * level + a H - x H' = (-a) * (level - lhs)
    return (-am) * (level - lhs)


def active_knots(g: GridBoundary) -> np.ndarray:
    """Mask of knots in [0, x_hat]."""
    return g.knots <= g.x_hat


def validate_initial(g0: GridBoundary, params: ModelParams, profit: ProfitModel,
                     floor_tol: float = 1e-10, margin_tol: float = 1e-9) -> ValidationReport:
    """Check the three conditions required of a policy-iteration starting boundary.

    (a) strictly increasing up to x_hat, (b) starts at the optimal floor,
    (c) lies on or above the optimal boundary at every knot up to x_hat.
    """
    bad = []
    mask = active_knots(g0)
    v = g0.values[mask]
    if v.size > 1 and np.any(np.diff(v) <= 0):
        bad.append("(a) not strictly increasing on [0, x_hat]")
    if abs(g0.floor - y_floor(params)) > floor_tol:
        bad.append("(b) g(0) != exp(-(1 + kappa rho / lambda))")
    margin = coverage_margin(g0, params, profit)[mask]
    scale = max(1.0, float(np.max(np.abs(margin))) if margin.size else 1.0)
    if np.any(margin < -margin_tol * scale):
        n = int(np.sum(margin < -margin_tol * scale))
        bad.append(f"(c) below the optimal boundary at {n} knot(s)")
    return ValidationReport(bad)


def isotonic_project(values) -> np.ndarray:
    """L2 projection onto nondecreasing sequences (pool adjacent violators)."""
    v = np.asarray(values, dtype=float)
    n = v.size
    means = np.empty(n)
    sizes = np.empty(n, dtype=int)
    top = 0
    for val in v:
        means[top], sizes[top] = val, 1
        while top > 0 and means[top - 1] > means[top]:
            w = sizes[top - 1] + sizes[top]
            means[top - 1] = (means[top - 1] * sizes[top - 1] + means[top] * sizes[top]) / w
            sizes[top - 1] = w
            top -= 1
        top += 1
    return np.repeat(means[:top], sizes[:top])


def _check_same_grid(g: GridBoundary, h: GridBoundary):
    if g.knots.shape != h.knots.shape or np.any(g.knots != h.knots):
        raise BoundaryError("boundaries live on different grids")


def l1_distance(g: GridBoundary, h: GridBoundary) -> float:
    """Trapezoid-weighted sum of |g - h| over the shared knots."""
    _check_same_grid(g, h)
    d = np.abs(g.values - h.values)
    return float(np.sum(0.5 * (d[1:] + d[:-1]) * np.diff(g.knots)))


def sup_distance(g: GridBoundary, h: GridBoundary) -> float:
    _check_same_grid(g, h)
    return float(np.max(np.abs(g.values - h.values)))
