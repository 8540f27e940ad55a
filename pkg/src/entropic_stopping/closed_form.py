"""Explicit solution of the entropy-regularized real option problem.

The optimal reflection boundary is

    g_lam(x) = min{exp((x H'(x)/(-a) + H(x) - kappa - lam/rho) / (lam/rho)), 1},

its inverse b_lam solves x H'(x)/(-a) + H(x) = kappa + (lam/rho)(1 + log y),
and the value follows the reflection-policy formula with A = A_2 built from b_lam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boundary import GridBoundary, from_function
from .model import (ModelError, ModelParams, PowerProfit, ProfitModel, boundary_lhs,
                    characteristic_roots, classical_boundary, power_constant,
                    solve_boundary_level)
from .reflection import ReflectionValue

TABLE_SIZE = 2001


class ClosedFormSolution(ReflectionValue):
    """Cached closed-form objects for one parameter set (immutable after construction)."""

    def __init__(self, params: ModelParams, profit: ProfitModel, table_size: int = TABLE_SIZE,
                 x_max: float = None):
        if not params.lam > 0:
            raise ModelError("lambda = 0 degenerates the boundary to a step; use classical_boundary")
        self._setup(params, profit)
        self.y_floor = math.exp(-1.0 - params.kappa * params.rho / params.lam)
        if self.y_floor <= 0.0:
            raise ModelError(f"lambda={params.lam} too small: the boundary floor underflows")
        top_level = params.kappa + params.temperature_ratio
        try:
            self.x_hat = self._solve_level(top_level)
        except ModelError:
            self.x_hat = math.inf
        span = self.x_hat if math.isfinite(self.x_hat) else (x_max or 1e3 * classical_boundary(params, profit))
        xs = np.concatenate([[0.0], np.geomspace(span * 1e-8, span, table_size - 1)])
        self._build_table(self.g_lambda(xs))

    @property
    def floor(self) -> float:
        return self.y_floor

    def _solve_level(self, level: float) -> float:
        if level <= 0:
            return 0.0
        if isinstance(self.profit, PowerProfit):
            pc = power_constant(self.params, self.profit) * self.profit.c
            th, am = self.profit.theta, self.alpha
            return (level * (-am) / (pc * (th - am))) ** (1.0 / th)
        return solve_boundary_level(self.profit, self.params, level, self.roots)

    def g_lambda(self, x):
        x = np.asarray(x, dtype=float)
        ratio = self.params.temperature_ratio
        lhs = np.asarray(boundary_lhs(self.profit, self.params, x, self.roots))
        out = np.minimum(np.exp((lhs - self.params.kappa - ratio) / ratio), 1.0)
        return out if out.ndim else float(out)

    boundary = g_lambda

    def b_lambda(self, y):
        """Inverse of g_lambda on [y_floor, 1]; 0 below the floor."""
        y = np.asarray(y, dtype=float)
        if np.any((y <= 0) | (y > 1)):
            raise ModelError("b_lambda needs y in (0, 1]")
        levels = self.level(y)
        if isinstance(self.profit, PowerProfit):
            pc = power_constant(self.params, self.profit) * self.profit.c
            th, am = self.profit.theta, self.alpha
            base = np.maximum(levels, 0.0) * (-am) / (pc * (th - am))
            out = np.power(base, 1.0 / th)
        else:
            out = np.vectorize(self._solve_level, otypes=[float])(levels)
        return out if out.ndim else float(out)

    def boundary_inverse(self, y):
        y = np.asarray(y, dtype=float)
        return self.b_lambda(np.clip(y, self.y_floor, 1.0)) * (y >= self.y_floor)

    def a2(self, y):
        y = np.asarray(y, dtype=float)
        if np.any((y < self.y_floor) | (y > 1)):
            raise ModelError("A_2 is defined on [y_floor, 1]")
        return self.a(y)

    def to_grid(self, knots) -> GridBoundary:
        return from_function(knots, self.g_lambda)


def solve(params: ModelParams, profit: ProfitModel, **kw) -> ClosedFormSolution:
    return ClosedFormSolution(params, profit, **kw)


def g_lambda(sol: ClosedFormSolution, x):
    return sol.g_lambda(x)


def b_lambda(sol: ClosedFormSolution, y):
    return sol.b_lambda(y)


def a2(sol: ClosedFormSolution, y):
    return sol.a2(y)


def value(sol: ClosedFormSolution, x, y):
    return sol.value(x, y)


@dataclass
class SweepRow:
    lam: float
    y: float
    b_lambda: float
    b_star: float

    @property
    def gap(self) -> float:
        return self.b_lambda - self.b_star


@dataclass
class SweepResult:
    rows: list
    b_star: float
    direction: str  # "nonincreasing", "nondecreasing" or "constant" in lambda

    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.rows])


def _b_lambda_level(params: ModelParams, profit: ProfitModel, y: float, roots) -> float:
    level = params.kappa + params.temperature_ratio * (1.0 + math.log(y))
    if isinstance(profit, PowerProfit):
        pc = power_constant(params, profit) * profit.c
        th, am = profit.theta, roots.alpha_minus
        return (max(level, 0.0) * (-am) / (pc * (th - am))) ** (1.0 / th)
    return solve_boundary_level(profit, params, level, roots)


def vanishing_sweep(params: ModelParams, profit: ProfitModel, lambdas, y: float) -> SweepResult:
    """b_lambda(y) across a decreasing list of temperatures, with the classical b*."""
    lambdas = [float(v) for v in lambdas]
    if any(v <= 0 for v in lambdas):
        raise ModelError("temperatures must be positive")
    if any(a < b for a, b in zip(lambdas, lambdas[1:])):
        raise ModelError("temperatures must be sorted in decreasing order")
    if not 0 < y <= 1:
        raise ModelError("y must lie in (0, 1]")
    roots = characteristic_roots(params)
    b_star = classical_boundary(params, profit)
    rows = [SweepRow(lam, y, _b_lambda_level(params.with_lambda(lam), profit, y, roots), b_star)
            for lam in lambdas]
    shift = 1.0 + math.log(y)
    if abs(shift) < 1e-15:
        direction = "constant"
    else:
        direction = "nonincreasing" if shift < 0 else "nondecreasing"
    return SweepResult(rows, b_star, direction)
