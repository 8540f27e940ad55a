import ast
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entropic_stopping import model_free
from entropic_stopping.boundary import (BoundaryError, GridBoundary, init_exponential, init_linear, l1_distance,
                                        y_floor)
from entropic_stopping.closed_form import ClosedFormSolution
from entropic_stopping.model_free import (FloorDivergence, SpiConfig, ValueTable, ZeroOrderConfig,
                                          estimate_value_grid, learn_y_floor, mixed_difference,
                                          mixed_difference_field, mixed_difference_stderr, run_spi,
                                          spi_update)
from entropic_stopping.policy_eval import evaluate_policy
from entropic_stopping.policy_iter import update_boundary
from entropic_stopping.simulator import PathConfig, Simulator

TARGET_25 = math.exp(-2.0)


def j_origin(params):
    r = params.temperature_ratio
    return lambda y: -params.kappa * y - r * (y * math.log(y) if y > 0 else 0.0)


def exact_table(g, cfg, params, profit):
    xs, ys = cfg.x_grid(), cfg.y_grid()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return ValueTable(xs, ys, evaluate_policy(g, params, profit).value(X, Y))


# --- configuration -----------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(delta_x=0.03), dict(M=0), dict(delta_y=1.5), dict(x_scheme="upwind"),
                                dict(delta_x=-0.1)])
def test_spi_config_rejects(kw):
    with pytest.raises(BoundaryError):
        SpiConfig(**kw)


def test_spi_config_grids():
    cfg = SpiConfig()
    assert cfg.x_grid().size == 251 and cfg.y_grid().size == 51
    assert cfg.y_grid()[-1] == 1.0


@pytest.mark.parametrize("kw", [dict(y0=0.0), dict(y0=1.0), dict(c0=0.0), dict(eta=-1.0), dict(max_iters=0)])
def test_zero_order_config_rejects(kw):
    with pytest.raises(ValueError):
        ZeroOrderConfig(**kw)


# --- floor learning ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sim25(params25, profit):
    return Simulator(params25, profit, PathConfig(seed=2024))


@pytest.mark.parametrize("y0", [0.5, 0.99])
def test_learned_floor(sim25, y0):
    res = learn_y_floor(ZeroOrderConfig(y0=y0), sim25)
    assert abs(res.y - TARGET_25) <= 1e-3
    assert len(res.trace) == 500


def test_noiseless_geometric_decay(params25):
    res = learn_y_floor(ZeroOrderConfig(), objective=j_origin(params25))
    err = np.array([(row[1] - TARGET_25) ** 2 for row in res.trace])
    window = err[5:61]
    assert np.all(np.diff(window) < 0)
    bound = window[0] * 0.95 ** np.arange(window.size)
    assert np.all(window <= bound)
    assert abs(res.y - TARGET_25) < 1e-6


def test_two_point_estimate_vanishes_at_optimum(params25):
    f = j_origin(params25)
    for eps in (1e-2, 1e-3):
        grad = (f(TARGET_25 + eps) - f(TARGET_25 - eps)) / (2 * eps)
        assert abs(grad) <= 10 * eps ** 2 / TARGET_25 ** 2


def test_ascent_direction(params25):
    """The learner climbs: from below the optimum the first step moves up."""
    res = learn_y_floor(ZeroOrderConfig(y0=0.05, max_iters=1), objective=j_origin(params25))
    assert res.trace[0][2] > 0 and res.y > 0.05


def test_divergence_guard():
    with pytest.raises(FloorDivergence) as info:
        learn_y_floor(ZeroOrderConfig(y0=0.5, eta=10.0), objective=lambda y: 100.0 * y)
    assert len(info.value.trace) >= 10


def test_floor_needs_a_source():
    with pytest.raises(ValueError):
        learn_y_floor(ZeroOrderConfig())


# --- value table -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def coarse_cfg():
    return SpiConfig(delta_x=0.5, delta_y=0.1, M=1000, path_cfg=PathConfig(seed=99))


@pytest.fixture(scope="module")
def lin_table(coarse_cfg, params, profit):
    knots = coarse_cfg.x_grid()
    g = init_linear(params, profit, knots)
    return g, estimate_value_grid(g, coarse_cfg, Simulator(params, profit, coarse_cfg.path_cfg))


def test_table_zero_row(lin_table):
    g, table = lin_table
    assert np.all(table.u[:, 0] == 0.0)


def test_table_agrees_with_semi_analytic(lin_table, params, profit):
    g, table = lin_table
    v = evaluate_policy(g, params, profit)
    X, Y = np.meshgrid(table.xs, table.ys, indexing="ij")
    exact = v.value(X, Y)
    se = np.where(table.stderr > 0, table.stderr, np.inf)
    z = np.abs(table.u - exact)[:, 1:] / se[:, 1:]
    assert np.max(z[1:]) <= 4.0
    # x = 0 is deterministic
    assert np.allclose(table.u[0], exact[0], atol=1e-3)


def test_table_flat_above_boundary(lin_table):
    g, table = lin_table
    for i, x in enumerate(table.xs):
        above = table.ys >= g.eval(x)
        if above.sum() > 1:
            row = table.u[i, above]
            assert np.all(row == row[0])


def test_table_csv(tmp_path, lin_table):
    _, table = lin_table
    path = tmp_path / "u.csv"
    table.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,u_bar,stderr"
    assert len(lines) == 1 + table.u.size


# --- mixed differences -----------------------------------------------------------------------

def test_mixed_difference_consistency(g_lin, params, profit):
    v = evaluate_policy(g_lin, params, profit)
    x, y = 4.0, 0.3
    errs = []
    for h in (0.04, 0.02, 0.01):
        xs = x + h * np.arange(-1, 2)
        ys = y - h * np.arange(1, -1, -1)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        table = ValueTable(xs, ys, v.value(X, Y))
        errs.append(abs(mixed_difference(table, 1, 1) - v.value_dxy(x, y - 0.5 * h)))
    assert errs[2] < errs[1] < errs[0]


def test_mixed_difference_matches_field():
    rng = np.random.default_rng(0)
    xs, ys = np.linspace(0, 1, 6), np.linspace(0, 1, 5)
    table = ValueTable(xs, ys, rng.normal(size=(6, 5)))
    field = mixed_difference_field(table)
    for i in range(1, 5):
        for j in range(1, 5):
            assert field[i, j] == pytest.approx(mixed_difference(table, i, j), rel=1e-12)


def test_mixed_difference_commutes():
    rng = np.random.default_rng(1)
    u = rng.normal(size=(7, 6))
    dx, dy = 0.2, 0.1
    a = ((u[2:, 1:] - u[:-2, 1:]) - (u[2:, :-1] - u[:-2, :-1])) / (2 * dx * dy)
    uy = (u[:, 1:] - u[:, :-1]) / dy
    b = (uy[2:] - uy[:-2]) / (2 * dx)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("i,j", [(0, 2), (5, 2), (2, 0), (2, 5)])
def test_mixed_difference_edges(i, j):
    table = ValueTable(np.linspace(0, 1, 6), np.linspace(0, 1, 5), np.zeros((6, 5)))
    with pytest.raises(IndexError):
        mixed_difference(table, i, j)


def test_mixed_difference_stderr_shape(lin_table):
    _, table = lin_table
    se = mixed_difference_stderr(table)
    assert se.shape == table.u.shape
    assert mixed_difference_stderr(ValueTable(table.xs, table.ys, table.u)) is None


# --- update -------------------------------------------------------------------------------------

def test_oracle_update_within_a_cell(g_lin, params, profit):
    cfg = SpiConfig()
    floor = y_floor(params)
    g_spi, _ = spi_update(g_lin, exact_table(g_lin, cfg, params, profit), cfg, floor)
    g_pi, _ = update_boundary(evaluate_policy(g_lin, params, profit), g_lin)
    rise = np.maximum(np.abs(np.diff(g_pi.values, prepend=g_pi.values[0])),
                      np.abs(np.diff(g_pi.values, append=g_pi.values[-1])))
    assert np.all(np.abs(g_spi.values - g_pi.values) <= np.maximum(rise, cfg.delta_y))


def test_update_rejects_other_grid(g_lin, params, profit):
    cfg = SpiConfig(delta_x=0.1)
    table = ValueTable(cfg.x_grid(), cfg.y_grid(), np.zeros((51, 51)))
    with pytest.raises(BoundaryError):
        spi_update(g_lin, table, cfg, 0.1)


def test_update_keeps_flat_column():
    """A column whose boundary-row difference is nonnegative is left alone."""
    cfg = SpiConfig(delta_x=1.0, delta_y=0.25, x_bar=4.0)
    knots = cfg.x_grid()
    g = GridBoundary(knots, np.array([0.2, 0.4, 0.6, 0.8, 1.0]))
    xs, ys = cfg.x_grid(), cfg.y_grid()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    new, flagged = spi_update(g, ValueTable(xs, ys, X * Y), cfg, 0.2)
    assert np.array_equal(new.values, g.values)
    assert not flagged


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 0.3))
def test_update_output_is_admissible(seed, floor):
    rng = np.random.default_rng(seed)
    cfg = SpiConfig(delta_x=0.5, delta_y=0.1, x_bar=5.0)
    xs, ys = cfg.x_grid(), cfg.y_grid()
    vals = np.sort(rng.uniform(floor, 1.0, xs.size))
    vals[0] = floor
    g = GridBoundary(xs, vals)
    table = ValueTable(xs, ys, rng.normal(size=(xs.size, ys.size)))
    new, _ = spi_update(g, table, cfg, floor)
    assert np.all(np.diff(new.values) >= 0)
    assert np.all(new.values <= g.values + 1e-15)
    assert np.all(new.values >= floor - 1e-15)
    assert new.values[0] == floor


def test_model_free_purity():
    """The sample-based module reads no model quantities."""
    tree = ast.parse(Path(model_free.__file__).read_text())
    imported = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            imported.add(node.module or "")
            imported.update(a.name for a in node.names)
        elif isinstance(node, ast.Import):
            imported.update(a.name for a in node.names)
    banned = {"closed_form", "model", "resolvent", "resolvent_derivative", "characteristic_roots",
              "policy_eval", "reflection", "power_constant"}
    assert not imported & banned, imported & banned


# --- runs ---------------------------------------------------------------------------------------

def small_run(params, profit, seed, K=3):
    cfg = SpiConfig(delta_x=0.25, delta_y=0.05, M=20, K=K, path_cfg=PathConfig(seed=seed))
    knots = cfg.x_grid()
    g0 = init_exponential(params, profit, 0.75, knots, resolvent_scaled=True)
    truth = ClosedFormSolution(params, profit).to_grid(knots)
    return run_spi(g0, cfg, Simulator(params, profit, cfg.path_cfg), ground_truth=truth, floor=y_floor(params))


def test_seed_determinism(params, profit):
    a, b, c = small_run(params, profit, 5), small_run(params, profit, 5), small_run(params, profit, 6)
    assert a.l1_errors == b.l1_errors
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a.iterates, b.iterates))
    assert a.l1_errors != c.l1_errors


def test_iterates_bracketed(params, profit):
    tr = small_run(params, profit, 5, K=4)
    floor = y_floor(params)
    for prev, cur in zip(tr.iterates, tr.iterates[1:]):
        assert np.all(cur.values <= prev.values + 1e-15)
        assert np.all(cur.values >= floor - 1e-15)


def test_run_needs_a_source(g_lin):
    with pytest.raises(ValueError):
        run_spi(g_lin, SpiConfig(K=1))


def test_floor_pin_applied(params, profit):
    cfg = SpiConfig(delta_x=0.5, delta_y=0.1, K=1)
    g0 = init_linear(params, profit, cfg.x_grid())
    tr = run_spi(g0, cfg, estimator=lambda g, k: exact_table(g, cfg, params, profit), floor=0.01)
    assert tr.iterates[0].floor == 0.01 and tr.final.floor == 0.01


@pytest.mark.slow
def test_noisy_fixed_point_is_stable(params, profit):
    """At g_lambda, one update from an M = 10^4 table stays within two rows of the truth."""
    cfg = SpiConfig(delta_x=0.1, delta_y=0.1, M=10_000, path_cfg=PathConfig(seed=77))
    knots = cfg.x_grid()
    truth = ClosedFormSolution(params, profit).to_grid(knots)
    table = estimate_value_grid(truth, cfg, Simulator(params, profit, cfg.path_cfg))
    new, _ = spi_update(truth, table, cfg, y_floor(params))
    assert l1_distance(new, truth) <= 2 * cfg.delta_y


@pytest.mark.slow
def test_large_sample_run_reaches_noise_free_fixed_point(params, profit):
    cfg = SpiConfig(delta_x=0.1, delta_y=0.1, M=2000, K=7, path_cfg=PathConfig(seed=7))
    knots = cfg.x_grid()
    truth = ClosedFormSolution(params, profit).to_grid(knots)
    g0 = init_exponential(params, profit, 0.75, knots, resolvent_scaled=True)
    oracle = run_spi(g0, SpiConfig(delta_x=0.1, delta_y=0.1, K=20),
                     estimator=lambda g, k: exact_table(g, cfg, params, profit),
                     ground_truth=truth, floor=y_floor(params))
    noisy = run_spi(g0, cfg, Simulator(params, profit, cfg.path_cfg), ground_truth=truth, floor=y_floor(params))
    assert abs(noisy.l1_errors[-1] - oracle.l1_errors[-1]) <= 0.02
    assert np.all(np.diff(noisy.l1_errors) <= 1e-12)
