"""Value of a reflection policy: shared machinery for the closed form and policy evaluation.

For a nondecreasing boundary g with floor g(0), the value in the exploration
region y <= g(x) is

    u(x, y) = A(y) x^a + H(x) y - kappa y - (lam/rho) y log y,

with a = alpha_- < 0 and

    A(y) = int_{g(0)}^y (c(u) - H(g^{-1}(u))) g^{-1}(u)^{-a} du,
    c(u) = kappa + (lam/rho)(1 + log u).

Above the boundary the value is frozen at u(x, g(x)). ``A`` is tabulated by
Gauss-Legendre quadrature on cells between y-nodes; evaluating between nodes
integrates the remaining partial cell with the same rule, so A is smooth and
consistent with its derivative.
"""

from __future__ import annotations

import numpy as np

from .model import (CharacteristicRoots, ModelParams, ProfitModel, characteristic_roots,
                    resolvent, resolvent_derivative)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def xlogx(y):
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)), 0.0)
    return out


class CoefficientTable:
    """Cumulative integral of ``integrand`` from ``nodes[0]``, exact up to the quadrature rule."""

    def __init__(self, nodes, integrand):
        nodes = np.asarray(nodes, dtype=float)
        nodes = nodes[np.concatenate([[True], np.diff(nodes) > 0])]
        self.nodes = nodes
        self.integrand = integrand
        cells = self._gauss(nodes[:-1], nodes[1:])
        self.cumulative = np.concatenate([[0.0], np.cumsum(cells)])

    def _gauss(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        half = 0.5 * (hi - lo)
        pts = (lo + half)[..., None] + half[..., None] * _GL_NODES
        vals = self.integrand(pts.ravel()).reshape(pts.shape)
        return half * (vals @ _GL_WEIGHTS)

    @property
    def lower(self) -> float:
        return float(self.nodes[0])

    @property
    def upper(self) -> float:
        return float(self.nodes[-1])

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        yc = np.clip(y, self.nodes[0], self.nodes[-1])
        k = np.clip(np.searchsorted(self.nodes, yc, side="right") - 1, 0, len(self.nodes) - 2)
        out = self.cumulative[k] + self._gauss(self.nodes[k], yc)
        out = np.where(y <= self.nodes[0], 0.0, out)
        return out if out.ndim else float(out)


class ReflectionValue:
    """Value function of the reflection policy at a boundary.

    Subclasses provide ``boundary(x)`` and ``boundary_inverse(y)``; the latter
    must return 0 below the floor. Call ``_build_table(nodes)`` once those are
    available.
    """

    params: ModelParams
    profit: ProfitModel
    roots: CharacteristicRoots

    def _setup(self, params, profit, roots=None):
        self.params = params
        self.profit = profit
        self.roots = roots or characteristic_roots(params)
        self.alpha = self.roots.alpha_minus

    def boundary(self, x):
        raise NotImplementedError

    def boundary_inverse(self, y):
        raise NotImplementedError

    @property
    def floor(self) -> float:
        raise NotImplementedError

    # --- coefficient -----------------------------------------------------
    def level(self, y):
        """c(y) = kappa + (lam/rho)(1 + log y)."""
        with np.errstate(divide="ignore"):
            return self.params.kappa + self.params.temperature_ratio * (1.0 + np.log(y))

    def a_prime(self, y):
        y = np.asarray(y, dtype=float)
        s = np.asarray(self.boundary_inverse(np.maximum(y, self.floor)), dtype=float)
        num = self.level(np.maximum(y, self.floor)) - np.asarray(resolvent(self.profit, self.params, s))
        out = np.where((y < self.floor) | (s <= 0), 0.0, num * np.power(s, -self.alpha))
        return out if out.ndim else float(out)

    def _build_table(self, nodes):
        self.a_table = CoefficientTable(nodes, self.a_prime)

    def a(self, y):
        return self.a_table(y)

    # --- value and derivatives --------------------------------------------
    def _clip_level(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        gx = np.asarray(self.boundary(x), dtype=float)
        return x, y, gx, np.minimum(y, gx)

    def continuation(self, x, y):
        """A(y) x^a + H(x) y - kappa y - (lam/rho) y log y, without the boundary clip."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        p = self.params
        a = np.asarray(self.a(y))
        with np.errstate(divide="ignore", invalid="ignore"):
            # at x = 0 the level is clipped to the floor where A vanishes
            homog = np.where(a == 0.0, 0.0, a * np.power(x, self.alpha))
        out = homog + resolvent(self.profit, p, x) * y - p.kappa * y - p.temperature_ratio * xlogx(y)
        return out if np.ndim(out) else float(out)

    def value(self, x, y):
        x, y, gx, yb = self._clip_level(x, y)
        out = self.continuation(x, yb)
        return out if np.ndim(out) else float(out)

    def value_dy(self, x, y):
        """Analytic u_y; zero in the stopping region, +inf at y = 0."""
        x, y, gx, yb = self._clip_level(x, y)
        p = self.params
        s = np.asarray(self.boundary_inverse(np.maximum(y, self.floor)), dtype=float)
        num = self.level(np.maximum(y, self.floor)) - np.asarray(resolvent(self.profit, p, s))
        with np.errstate(invalid="ignore", over="ignore"):
            ratio = np.where(x > 0, np.power(np.divide(s, x, out=np.zeros_like(s), where=x > 0), -self.alpha), 0.0)
            a_term = np.where(y < self.floor, 0.0, num * ratio)
        out = a_term + np.asarray(resolvent(self.profit, p, x)) - self.level(y)
        out = np.where(y > gx, 0.0, out)
        return out if out.ndim else float(out)

    def value_dx(self, x, y):
        """Analytic u_x (continuous across the boundary)."""
        x, y, gx, yb = self._clip_level(x, y)
        out = (self.alpha * self.a(yb) * np.power(x, self.alpha - 1.0)
               + np.asarray(resolvent_derivative(self.profit, self.params, x)) * yb)
        return out if out.ndim else float(out)

    def value_dxy(self, x, y):
        """Analytic u_xy from the exploration side: a A'(y) x^(a-1) + H'(x).

        For y > g(x) this is the left limit at the boundary, i.e. the
        left y-derivative used by the policy update.
        """
        x, y, gx, yb = self._clip_level(x, y)
        p = self.params
        s = np.asarray(self.boundary_inverse(np.maximum(yb, self.floor)), dtype=float)
        num = self.level(np.maximum(yb, self.floor)) - np.asarray(resolvent(self.profit, p, s))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.power(s / x, -self.alpha)
        a_term = np.where(yb < self.floor, 0.0, self.alpha * num * ratio / x)
        out = a_term + np.asarray(resolvent_derivative(self.profit, p, x))
        return out if out.ndim else float(out)

    def hjb_operator(self, x, y, h: float = 1e-3):
        """Central-difference 0.5 s^2 x^2 u_xx + mu x u_x - rho u + (pi - rho kappa) y - lam y log y."""
        from .model import profit_function
        p = self.params
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        um, u0, up = self.value(x - h, y), self.value(x, y), self.value(x + h, y)
        uxx = (up - 2.0 * u0 + um) / (h * h)
        ux = (up - um) / (2.0 * h)
        pi = profit_function(self.profit)(x)
        return (0.5 * p.sigma ** 2 * x ** 2 * uxx + p.mu * x * ux - p.rho * u0
                + (pi - p.rho * p.kappa) * y - p.lam * xlogx(y))
