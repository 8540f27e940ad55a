"""Semi-analytic evaluation of a reflection policy given on a grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import BoundaryError, GridBoundary
from .model import ModelParams, ProfitModel
from .reflection import ReflectionValue

SUBCELLS = 8


class SemiAnalyticValue(ReflectionValue):
    """u_g for a piecewise-linear boundary g.

    A(y) is tabulated on the knot values of g, each gap split into
    ``subcells`` pieces; below g(0) the coefficient is 0.
    """

    def __init__(self, g: GridBoundary, params: ModelParams, profit: ProfitModel,
                 subcells: int = SUBCELLS, roots=None):
        self._setup(params, profit, roots)
        self.g = g
        levels = np.unique(g.values)
        if levels.size > 1:
            t = np.linspace(0.0, 1.0, subcells + 1)[:-1]
            nodes = (levels[:-1, None] + np.diff(levels)[:, None] * t).ravel()
            nodes = np.append(nodes, levels[-1])
        else:
            nodes = np.array([levels[0], levels[0]])
        self._build_table(nodes)

    @property
    def boundary_grid(self) -> GridBoundary:
        return self.g

    @property
    def floor(self) -> float:
        return self.g.floor

    def boundary(self, x):
        return self.g.eval(x)

    def boundary_inverse(self, y):
        return self.g._inverse(y, below=0.0)


def evaluate_policy(g: GridBoundary, params: ModelParams, profit: ProfitModel, **kw) -> SemiAnalyticValue:
    return SemiAnalyticValue(g, params, profit, **kw)


def value_of(v: ReflectionValue, x, y):
    return v.value(x, y)


def dxy(v: ReflectionValue, x, y):
    """Mixed derivative from the exploration side; only defined for y <= g(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y > np.asarray(v.boundary(x)) * (1 + 1e-12)):
        raise BoundaryError("dxy is only defined in the exploration region y <= g(x)")
    return v.value_dxy(x, y)


def write_value_surface(path, v: ReflectionValue, xs, ys, column: str = "u") -> None:
    """CSV ``x,y,<column>`` over the product grid, x-major."""
    X, Y = np.meshgrid(np.asarray(xs, float), np.asarray(ys, float), indexing="ij")
    V = np.asarray(v.value(X, Y))
    with open(path, "w") as fh:
        fh.write(f"x,y,{column}\n")
        for x, y, u in zip(X.ravel(), Y.ravel(), V.ravel()):
            fh.write(f"{x:.17g},{y:.17g},{u:.17g}\n")


@dataclass
class HJBResidual:
    x: np.ndarray
    y: np.ndarray
    residual: np.ndarray
    exploration: np.ndarray  # y <= g(x), away from the boundary band
    stopping: np.ndarray     # y > g(x), away from the boundary band

    @property
    def max_exploration(self) -> float:
        r = np.abs(self.residual[self.exploration])
        return float(r.max()) if r.size else 0.0

    @property
    def max_stopping(self) -> float:
        r = self.residual[self.stopping]
        return float(r.max()) if r.size else -np.inf


# one-sided fourth-order weights for f'(y0) from f(y0), f(y0 - h), ..., f(y0 - 4h)
_BACKWARD = np.array([25.0, -48.0, 36.0, -16.0, 3.0]) / 12.0


@dataclass
class SmoothFit:
    x: np.ndarray
    dy: np.ndarray   # one-sided u_y at (x, g(x)) from below
    dxy: np.ndarray  # one-sided y-derivative of u_x at (x, g(x)) from below

    @property
    def max_dy(self) -> float:
        return float(np.max(np.abs(self.dy))) if self.dy.size else 0.0

    @property
    def max_dxy(self) -> float:
        return float(np.max(np.abs(self.dxy))) if self.dxy.size else 0.0


def smooth_fit(v: ReflectionValue, xs, h: float = 1e-5) -> SmoothFit:
    """Finite-difference u_y and u_xy at the boundary, from inside the exploration region.

    Only points where the boundary lies strictly between the floor + 4h and 1 are used.
    """
    xs = np.asarray(xs, dtype=float)
    gx = np.asarray(v.boundary(xs), dtype=float)
    keep = (gx < 1.0) & (gx - 4 * h > v.floor) & (xs > 0)
    xs, gx = xs[keep], gx[keep]
    steps = np.arange(5) * h
    Y = gx[:, None] - steps
    X = np.broadcast_to(xs[:, None], Y.shape)
    dy = (np.asarray(v.value(X, Y)) @ _BACKWARD) / h
    dxy = (np.asarray(v.value_dx(X, Y)) @ _BACKWARD) / h
    return SmoothFit(xs, dy, dxy)


def hjb_residual(v: ReflectionValue, xs, ys, h: float = 1e-3) -> HJBResidual:
    """Finite-difference HJB residual on the product grid ``xs`` x ``ys``.

    Points whose x-stencil reaches within 2h of the boundary are excluded, as
    u_xx jumps across it.
    """
    X, Y = np.meshgrid(np.asarray(xs, float), np.asarray(ys, float), indexing="ij")
    R = v.hjb_operator(X, Y, h)
    G = np.asarray(v.boundary(X))
    with np.errstate(invalid="ignore"):
        B = np.asarray(v.boundary_inverse(np.maximum(Y, v.floor)), dtype=float)
    # rows below the floor never meet the boundary
    away = (Y < v.floor) | (np.abs(X - B) > 2 * h)
    return HJBResidual(X, Y, R, (Y <= G) & away, (Y > G) & away)
