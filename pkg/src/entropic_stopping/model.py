"""Model parameters, profit specifications and classical real-option quantities.

The state follows a geometric Brownian motion ``dX = mu X dt + sigma X dW``;
the running profit ``pi`` is folded into the resolvent
``H(x) = E[int_0^inf e^{-rho t} pi(X_t^x) dt]``, which is all the closed
form and the policy-evaluation formulas need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np


@dataclass(frozen=True)
class ModelParams:
    mu: float
    sigma: float
    rho: float
    kappa: float
    lam: float = 0.5

    @property
    def temperature_ratio(self) -> float:
        """lambda / rho, the weight of the entropy term after discounting."""
        return self.lam / self.rho

    def with_lambda(self, lam: float) -> "ModelParams":
        return ModelParams(self.mu, self.sigma, self.rho, self.kappa, lam)


# Market values used throughout the numerical study.
PAPER_PARAMS = ModelParams(mu=0.2, sigma=0.2, rho=0.5, kappa=5.0, lam=0.5)


@dataclass(frozen=True)
class PowerProfit:
    """pi(x) = c x**theta with 0 < theta < 1."""

    c: float = 1.0
    theta: float = 0.5

    def profit(self, x):
        return self.c * np.power(x, self.theta)


@dataclass(frozen=True)
class CustomProfit:
    """Caller-supplied resolvent and its derivative.

    ``profit`` is optional; it is only needed by the path simulator.
    """

    resolvent: Callable
    resolvent_derivative: Callable
    profit: Optional[Callable] = None


ProfitModel = Union[PowerProfit, CustomProfit]


@dataclass(frozen=True)
class CharacteristicRoots:
    alpha_minus: float
    alpha_plus: float


class ModelError(ValueError):
    """Raised on inputs outside the model's domain."""


@dataclass
class ValidationReport:
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(params: ModelParams, profit: ProfitModel, n_samples: int = 200) -> ValidationReport:
    """Check the standing assumptions; returns every violated condition."""
    bad = []
    if not params.sigma > 0:
        bad.append("sigma <= 0")
    if not params.rho > params.mu:
        bad.append("rho <= mu")
    if not params.rho > 0:
        bad.append("rho <= 0")
    if not params.kappa > 0:
        bad.append("kappa <= 0")
    if not params.lam >= 0:
        bad.append("lambda < 0")
    if isinstance(profit, PowerProfit):
        if not profit.c > 0:
            bad.append("c <= 0")
        if not 0 < profit.theta < 1:
            bad.append("theta not in (0,1)")
    elif isinstance(profit, CustomProfit):
        xs = np.geomspace(1e-4, 1e3, n_samples)
        h0 = float(profit.resolvent(0.0))
        if abs(h0) > 1e-12:
            bad.append("H(0) != 0")
        dh = np.asarray([profit.resolvent_derivative(x) for x in xs], dtype=float)
        if np.any(dh < 0):
            bad.append("H' < 0")
        if np.any(np.diff(xs * dh) <= 0):
            bad.append("x H'(x) not strictly increasing")
    else:
        bad.append(f"unknown profit model {type(profit).__name__}")
    return ValidationReport(bad)


def characteristic_roots(params: ModelParams) -> CharacteristicRoots:
    """Roots of 0.5 sigma^2 a(a-1) + mu a - rho = 0.

    The larger-magnitude root is taken from the quadratic formula and the other
    from the product of the roots, so neither suffers cancellation.
    """
    if not params.sigma > 0:
        raise ModelError("sigma must be positive")
    a = 0.5 * params.sigma ** 2
    b = params.mu - a
    c = -params.rho
    disc = math.sqrt(b * b - 4 * a * c)
    q = -0.5 * (b + math.copysign(disc, b))
    r1, r2 = q / a, c / q
    lo, hi = min(r1, r2), max(r1, r2)
    return CharacteristicRoots(alpha_minus=lo, alpha_plus=hi)


def power_constant(params: ModelParams, profit: PowerProfit) -> float:
    """P = 1 / (rho + sigma^2 theta (1-theta) / 2 - theta mu)."""
    th = profit.theta
    denom = params.rho + 0.5 * params.sigma ** 2 * th * (1 - th) - th * params.mu
    if not denom > 0:
        raise ModelError("resolvent diverges: rho + sigma^2 theta(1-theta)/2 - theta mu <= 0")
    return 1.0 / denom


def resolvent(profit: ProfitModel, params: ModelParams, x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ModelError("resolvent needs x >= 0")
    if isinstance(profit, PowerProfit):
        out = power_constant(params, profit) * profit.c * np.power(x, profit.theta)
    else:
        out = np.vectorize(profit.resolvent, otypes=[float])(x)
    return out if out.ndim else float(out)


def resolvent_derivative(profit: ProfitModel, params: ModelParams, x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ModelError("H' is singular at x = 0")
    if isinstance(profit, PowerProfit):
        P = power_constant(params, profit)
        out = profit.theta * P * profit.c * np.power(x, profit.theta - 1.0)
    else:
        out = np.vectorize(profit.resolvent_derivative, otypes=[float])(x)
    return out if out.ndim else float(out)


def boundary_lhs(profit: ProfitModel, params: ModelParams, x, roots: CharacteristicRoots = None):
    """x H'(x) / (-alpha_-) + H(x), extended by continuity to x = 0.

    Strictly increasing in x; the classical and regularized free boundaries are
    level sets of this map.
    """
    roots = roots or characteristic_roots(params)
    x = np.asarray(x, dtype=float)
    h = np.asarray(resolvent(profit, params, x), dtype=float)
    if isinstance(profit, PowerProfit):
        xdh = profit.theta * h
    else:
        xdh = np.zeros_like(x)
        pos = x > 0
        xdh[pos] = x[pos] * np.asarray(resolvent_derivative(profit, params, x[pos]))
    out = xdh / (-roots.alpha_minus) + h
    return out if out.ndim else float(out)


def solve_boundary_level(profit: ProfitModel, params: ModelParams, level: float,
                         roots: CharacteristicRoots = None, x_max: float = 1e8,
                         rtol: float = 1e-10) -> float:
    """Smallest x with boundary_lhs(x) = level, by bisection.

    Returns 0 when ``level <= 0``. The bracket is grown geometrically from 1.
    """
    roots = roots or characteristic_roots(params)
    if level <= 0:
        return 0.0
    f = lambda x: boundary_lhs(profit, params, x, roots) - level
    lo, hi = 0.0, 1.0
    while f(hi) < 0:
        lo, hi = hi, hi * 2.0
        if hi > x_max:
            raise ModelError("boundary outside domain")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def classical_boundary(params: ModelParams, profit: ProfitModel, method: str = "auto") -> float:
    """Exit threshold b* of the unregularized problem.

    Solves x H'(x) / (-alpha_-) + H(x) = kappa; the power profit has the
    closed form [-(1/(P c)) (alpha_-/(theta - alpha_-)) kappa]^(1/theta).
    """
    roots = characteristic_roots(params)
    if method == "auto":
        method = "closed" if isinstance(profit, PowerProfit) else "bisection"
    if method == "closed":
        if not isinstance(profit, PowerProfit):
            raise ModelError("closed form needs a power profit")
        P = power_constant(params, profit)
        am, th = roots.alpha_minus, profit.theta
        return (-(1.0 / (P * profit.c)) * (am / (th - am)) * params.kappa) ** (1.0 / th)
    return solve_boundary_level(profit, params, params.kappa, roots)


def profit_function(profit: ProfitModel) -> Callable:
    if isinstance(profit, PowerProfit):
        return profit.profit
    if profit.profit is None:
        raise ModelError("custom profit has no running-profit function")
    return np.vectorize(profit.profit, otypes=[float])
