import math

import numpy as np
import pytest
from scipy import stats

from entropic_stopping.model import ModelError
from entropic_stopping.model_free import never_stop_boundary
from entropic_stopping.policy_eval import evaluate_policy
from entropic_stopping.simulator import PathConfig, Simulator, UnitPathEnsemble


@pytest.fixture(scope="module")
def sim(params, profit):
    return Simulator(params, profit, PathConfig(seed=11))


def discounted_mass(cfg, rho):
    """Trapezoid sum of e^{-rho t} over the time grid."""
    n = cfg.n_steps
    w = np.full(n + 1, cfg.dt) * np.exp(-rho * cfg.dt * np.arange(n + 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w.sum()


# --- configuration -------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(horizon=-1.0), dict(mode="antithetic"), dict(seed=-1)])
def test_path_config_rejects(kw):
    with pytest.raises(ModelError):
        PathConfig(**kw)


def test_short_horizon_rejected(params, profit):
    with pytest.raises(ModelError, match="horizon"):
        Simulator(params, profit, PathConfig(horizon=10.0))


def test_mc_value_needs_two_paths(sim, truth):
    with pytest.raises(ModelError):
        sim.mc_value(1.0, 0.5, truth, 1)


# --- deterministic origin --------------------------------------------------------------

def test_origin_full_weight(sim, params):
    ens = sim.ensemble(4, (9,))
    r = sim.rewards(0.0, [1.0], never_stop_boundary(), ens)
    expected = -params.kappa * params.rho * discounted_mass(sim.cfg, params.rho)
    assert np.all(r == r[0, 0])
    assert r[0, 0] == pytest.approx(expected, rel=1e-14)
    assert r[0, 0] == pytest.approx(-5.0, abs=1e-4)


@pytest.mark.parametrize("y", [0.05, 0.135, 0.5, 0.9])
def test_origin_partial_weight(sim, params, y):
    r = sim.rewards(0.0, [y], never_stop_boundary(), sim.ensemble(2, (9,)))
    expected = -params.kappa * y - params.temperature_ratio * y * math.log(y)
    assert r[0, 0] == pytest.approx(expected, abs=1e-4)


def test_zero_weight_earns_nothing(sim, truth):
    r = sim.rewards(2.0, [0.0], truth, sim.ensemble(300, (9,)))
    assert np.all(r == 0.0)


# --- paths ----------------------------------------------------------------------------

def test_terminal_law_is_lognormal(params):
    cfg = PathConfig(dt=0.1, horizon=30.0, seed=5)
    ens = UnitPathEnsemble(params, cfg, 100_000, (4,))
    ends = np.concatenate([lp[:, -1] for lp, _ in ens.blocks()])
    T = cfg.n_steps * cfg.dt
    mean, sd = (params.mu - 0.5 * params.sigma ** 2) * T, params.sigma * math.sqrt(T)
    assert stats.kstest(ends, "norm", args=(mean, sd)).pvalue > 0.01


def test_running_minimum_below_grid_path(params):
    ens = UnitPathEnsemble(params, PathConfig(seed=3), 50, (1,))
    lp, lm = ens.block(0)
    assert np.all(np.diff(lm, axis=1) <= 0)
    assert np.all(lm <= np.minimum.accumulate(lp, axis=1))
    assert np.all(lm[:, 0] == 0.0)


def test_blocks_reproducible_and_keyed(params):
    cfg = PathConfig(seed=3)
    a = UnitPathEnsemble(params, cfg, 300, (1,)).block(1)[0]
    b = UnitPathEnsemble(params, cfg, 300, (1,)).block(1)[0]
    c = UnitPathEnsemble(params, cfg, 300, (2,)).block(1)[0]
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_large_ensemble_is_not_cached(params):
    ens = UnitPathEnsemble(params, PathConfig(), 5000, (1,))
    assert ens._cache is None
    assert np.array_equal(ens.block(3)[0], ens.block(3)[0])


# --- reward functional ------------------------------------------------------------------

def test_reward_matches_explicit_weight_path(params, profit, g_exp_scaled):
    """Reward against a direct evaluation of Y_t = min(y, g(X) along the running minimum)."""
    cfg = PathConfig(seed=8, bridge=False)
    sim = Simulator(params, profit, cfg)
    ens = sim.ensemble(40, (6,))
    lp, lm = ens.block(0)
    x, ys = 1.3, np.array([0.05, 0.3, 0.7, 1.0])
    got = sim.rewards(x, ys, g_exp_scaled, ens)
    n = cfg.n_steps
    w = np.full(n + 1, cfg.dt) * np.exp(-params.rho * cfg.dt * np.arange(n + 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    X = x * np.exp(lp)
    for m in (0, 17, 39):
        G = g_exp_scaled.eval(np.minimum.accumulate(X[m]))
        for j, y in enumerate(ys):
            Y = np.minimum(y, G)
            assert np.all(np.diff(Y) <= 0)
            integrand = (np.sqrt(X[m]) - params.rho * params.kappa) * Y - params.lam * Y * np.log(Y)
            assert got[m, j] == pytest.approx(np.dot(w, integrand), rel=1e-10, abs=1e-12)


def test_reward_flat_above_boundary(sim, g_exp_scaled):
    x = 1.0
    gx = g_exp_scaled.eval(x)
    r = sim.rewards(x, [gx, min(1.0, gx + 0.1), 1.0], g_exp_scaled, sim.ensemble(100, (2,)))
    assert np.array_equal(r[:, 0], r[:, 1]) and np.array_equal(r[:, 0], r[:, 2])


def test_reward_envelope(sim, params, truth):
    floor = -params.kappa - params.lam / (math.e * params.rho)
    for x in (0.0, 0.5, 3.0):
        r = sim.rewards(x, [1.0], truth, sim.ensemble(1000, (12,)))
        assert np.all(r >= floor)


def test_scaling_of_paths(sim, g_lin):
    """Rewards at x reuse the unit paths scaled by x: identical streams give identical draws."""
    ens = sim.ensemble(64, (13,))
    a = sim.rewards(2.0, [0.5], g_lin, ens)
    b = np.array([sim.simulate_reward(2.0, 0.5, g_lin, ens, m) for m in range(64)])
    assert np.allclose(a[:, 0], b, rtol=1e-13, atol=1e-13)


# --- Monte Carlo value ------------------------------------------------------------------

def test_mc_matches_closed_form(sim, sol, truth):
    mean, se = sim.mc_value(1.0, 0.5, truth, 10_000, (20,))
    assert abs(mean - sol.value(1.0, 0.5)) <= 3 * se


def test_mc_matches_semi_analytic_exponential(sim, g_exp, params, profit):
    v = evaluate_policy(g_exp, params, profit)
    mean, se = sim.mc_value(2.0, 0.8, g_exp, 10_000, (21,))
    assert abs(mean - v.value(2.0, 0.8)) <= 3 * se


def test_dt_refinement(params, profit, g_exp_scaled):
    coarse = Simulator(params, profit, PathConfig(seed=4)).mc_value(2.0, 0.8, g_exp_scaled, 10_000, (22,))
    fine = Simulator(params, profit, PathConfig(seed=4, dt=0.005)).mc_value(2.0, 0.8, g_exp_scaled, 10_000, (22,))
    assert abs(coarse[0] - fine[0]) <= 2 * max(coarse[1], fine[1])


# --- grids and determinism ---------------------------------------------------------------

def test_value_grid_threads_bit_identical(params, profit, g_lin):
    xs, ys = np.linspace(0.0, 5.0, 11), np.linspace(0.0, 1.0, 6)
    one = Simulator(params, profit, PathConfig(seed=2)).value_samples(xs, ys, g_lin, 600, 3)
    four = Simulator(params, profit, PathConfig(seed=2, threads=4)).value_samples(xs, ys, g_lin, 600, 3)
    assert np.array_equal(one, four)


def test_value_grid_seed_changes_output(params, profit, g_lin):
    xs, ys = np.array([1.0, 2.0]), np.array([0.5])
    a = Simulator(params, profit, PathConfig(seed=2)).value_grid(xs, ys, g_lin, 50)[0]
    b = Simulator(params, profit, PathConfig(seed=3)).value_grid(xs, ys, g_lin, 50)[0]
    assert not np.array_equal(a, b)


def test_common_vs_independent(params, profit, g_lin):
    xs, ys = np.array([1.0, 2.0]), np.array([0.3, 0.6])
    crn = Simulator(params, profit, PathConfig(seed=2)).value_samples(xs, ys, g_lin, 40)
    ind = Simulator(params, profit, PathConfig(seed=2, mode="independent")).value_samples(xs, ys, g_lin, 40)
    assert crn.shape == ind.shape == (40, 2, 2)
    assert not np.array_equal(crn[:, 0, 0], ind[:, 0, 0])
    # the common ensemble drives every node with the same path m
    ens_first = Simulator(params, profit, PathConfig(seed=2)).rewards(2.0, ys, g_lin,
                                                                       UnitPathEnsemble(params, PathConfig(seed=2), 40, (1, 0)))
    assert np.array_equal(crn[:, 1, :], ens_first)


def test_value_grid_standard_error(sim, g_lin):
    mean, se = sim.value_grid([1.0], [0.5], g_lin, 200)
    r = sim.value_samples([1.0], [0.5], g_lin, 200)[:, 0, 0]
    assert se[0, 0] == pytest.approx(r.std(ddof=1) / math.sqrt(200), rel=1e-12)
    assert mean[0, 0] == pytest.approx(r.mean(), rel=1e-12)


def test_rejects_bad_state(sim, g_lin):
    with pytest.raises(ModelError):
        sim.rewards(-1.0, [0.5], g_lin, sim.ensemble(2))
    with pytest.raises(ModelError):
        sim.rewards(1.0, [1.5], g_lin, sim.ensemble(2))
