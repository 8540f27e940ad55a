import math

import numpy as np
import pytest

from entropic_stopping.boundary import init_exponential, init_linear, make_grid
from entropic_stopping.closed_form import ClosedFormSolution
from entropic_stopping.model import ModelParams, PowerProfit

# Frozen oracles at mu=0.2, sigma=0.2, rho=0.5, kappa=5, theta=0.5, c=1.
ALPHA_MINUS = (-9.0 - math.sqrt(181.0)) / 2.0
ALPHA_PLUS = (-9.0 + math.sqrt(181.0)) / 2.0
P_CONST = 1.0 / 0.405
B_STAR = 3.7584002646453656
X_HAT_05 = 5.4120963810893272      # smallest x with g_lambda = 1 at lambda = 0.5
B_LAMBDA_1_25 = 15.033601058581462  # b_lambda(1) at lambda = 2.5


def market(lam=0.5):
    return ModelParams(mu=0.2, sigma=0.2, rho=0.5, kappa=5.0, lam=lam)


@pytest.fixture(scope="session")
def profit():
    return PowerProfit(1.0, 0.5)


@pytest.fixture(scope="session")
def params():
    return market(0.5)


@pytest.fixture(scope="session")
def params25():
    return market(2.5)


@pytest.fixture(scope="session")
def knots():
    return make_grid(5.0, 0.02)


@pytest.fixture(scope="session")
def sol(params, profit):
    return ClosedFormSolution(params, profit)


@pytest.fixture(scope="session")
def sol25(params25, profit):
    return ClosedFormSolution(params25, profit)


@pytest.fixture(scope="session")
def truth(sol, knots):
    return sol.to_grid(knots)


@pytest.fixture(scope="session")
def g_lin(params, profit, knots):
    return init_linear(params, profit, knots)


@pytest.fixture(scope="session")
def g_exp(params, profit, knots):
    return init_exponential(params, profit, 0.75, knots)


@pytest.fixture(scope="session")
def g_exp_scaled(params, profit, knots):
    return init_exponential(params, profit, 0.75, knots, resolvent_scaled=True)


@pytest.fixture(scope="session")
def pi_linear_trace(g_lin, params, profit, truth):
    from entropic_stopping.policy_iter import run_pi
    return run_pi(g_lin, params, profit, K=30, tol=1e-6, ground_truth=truth)


def smooth3(v):
    v = np.asarray(v, dtype=float)
    return np.convolve(v, np.ones(3) / 3.0, mode="valid")
