"""Command-line driver: closed form, policy iteration, sample-based iteration, sweeps and checks.

Configuration is JSON with blocks ``model``, ``grid``, ``sim``, ``run`` and
``floor``. Precedence, lowest first: built-in defaults, the config file,
environment variables ``ESTOP_<BLOCK>__<KEY>`` (e.g. ``ESTOP_MODEL__LAMBDA``),
then command-line flags in the order given (``--set``, ``--seed``,
``--threads``; the last one wins).

Exit codes: 0 ok, 2 config error, 3 assumption violation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .boundary import (BoundaryError, GridBoundary, init_exponential, init_linear, make_grid,
                       read_boundary_csv, sup_distance, validate_initial, write_boundary_csv,
                       y_floor)
from .closed_form import ClosedFormSolution, vanishing_sweep
from .model import ModelError, ModelParams, PowerProfit, characteristic_roots, classical_boundary, validate
from .model_free import FloorDivergence, SpiConfig, ZeroOrderConfig, learn_y_floor, run_spi
from .policy_eval import hjb_residual, smooth_fit, write_value_surface
from .policy_iter import InitializationError, run_pi
from .simulator import PathConfig, Simulator
from .trace import write_timing_csv, write_trace_csv

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ENV_PREFIX = "ESTOP_"
COMMANDS = ("closed-form", "pi", "spi", "sweep", "learn-floor", "hjb-check")

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_NUMERICAL = 0, 2, 3, 4

DEFAULTS = {
    "model": {"mu": 0.2, "sigma": 0.2, "rho": 0.5, "kappa": 5.0,
              "profit": {"power_c": 1.0, "power_theta": 0.5}},
    "grid": {"delta_x": 0.02, "delta_y": 0.02, "x_bar": 5.0},
    "sim": {"dt": 0.01, "horizon": 30.0, "M": 20, "seed": 0, "mode": "common_random_numbers",
            "threads": 1},
    "run": {"command": None, "K": 30, "tol": 1e-6, "init": "exponential", "zeta": 0.75,
            "resolvent_scaled": False, "strict": True, "floor": "analytic", "x_scheme": "central",
            "spi_tol": 0.0, "write_tables": False,
            "lambdas": [2.5, 1.0, 0.5, 0.1, 0.01], "sweep_y": [1.0, 0.1, math.exp(-1.0)],
            "noiseless": False, "hjb_nx": 200, "hjb_ny": 100, "hjb_h": 1e-3, "hjb_tol": 1e-3,
            "smooth_fit_h": 1e-5, "smooth_fit_tol": 1e-4, "output": "out"},
    "floor": {"y0": 0.5, "c0": 0.1, "eta": 0.05, "max_iters": 500, "M_inner": 256,
              "margin": 1e-6, "max_clamped": 10},
}


class ConfigError(ValueError):
    pass


class AssumptionViolation(ValueError):
    pass


# --- configuration -------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = [k for k in dotted.split(".") if k]
    if not keys:
        raise ConfigError(f"empty key in override {dotted!r}")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    pairs = []
    for name in sorted(environ):
        if name.startswith(ENV_PREFIX) and len(name) > len(ENV_PREFIX):
            dotted = ".".join(name[len(ENV_PREFIX):].lower().split("__"))
            pairs.append((dotted, _parse_value(environ[name])))
    return pairs


def load_config(path=None, overrides=(), environ=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{p}: top level must be an object")
        cfg = _merge(cfg, user)
    for dotted, value in env_overrides(environ):
        _set_path(cfg, dotted, value)
    for dotted, value in overrides:
        _set_path(cfg, dotted, value)
    return cfg


def _get(cfg: dict, dotted: str, kind=float):
    node = cfg
    for k in dotted.split("."):
        if not isinstance(node, dict) or node.get(k) is None:
            raise ConfigError(f"missing required key {dotted}")
        node = node[k]
    try:
        if kind is int:
            if isinstance(node, bool) or float(node) != int(float(node)):
                raise ValueError
            return int(float(node))
        if kind is bool:
            if not isinstance(node, bool):
                raise ValueError
            return node
        return kind(node)
    except (TypeError, ValueError):
        raise ConfigError(f"{dotted}: expected {kind.__name__}, got {node!r}") from None


def model_from_config(cfg: dict, need_lambda: bool = True):
    lam = _get(cfg, "model.lambda") if need_lambda else 1.0
    params = ModelParams(_get(cfg, "model.mu"), _get(cfg, "model.sigma"), _get(cfg, "model.rho"),
                         _get(cfg, "model.kappa"), lam)
    profit = PowerProfit(_get(cfg, "model.profit.power_c"), _get(cfg, "model.profit.power_theta"))
    report = validate(params, profit)
    if not report.ok:
        raise AssumptionViolation("model assumptions violated: " + "; ".join(report.violations))
    if need_lambda and not lam > 0:
        raise ConfigError("model.lambda must be positive")
    return params, profit


def grid_from_config(cfg: dict) -> np.ndarray:
    try:
        return make_grid(_get(cfg, "grid.x_bar"), _get(cfg, "grid.delta_x"))
    except BoundaryError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def y_axis(cfg: dict) -> np.ndarray:
    dy = _get(cfg, "grid.delta_y")
    n = int(math.floor(1.0 / dy + 1e-9))
    if not (dy > 0 and n >= 1 and abs(n * dy - 1.0) < 1e-9):
        raise ConfigError("grid.delta_y must divide 1")
    return np.arange(n + 1) * dy


def threads_from_config(cfg: dict) -> int:
    n = _get(cfg, "sim.threads", int)
    if n < 0:
        raise ConfigError("sim.threads must be >= 0")
    return n or (os.cpu_count() or 1)


def path_config(cfg: dict) -> PathConfig:
    seed = _get(cfg, "sim.seed", int)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("sim.seed must be an unsigned 64-bit integer")
    mode = _get(cfg, "sim.mode", str)
    try:
        return PathConfig(dt=_get(cfg, "sim.dt"), horizon=_get(cfg, "sim.horizon"), seed=seed,
                          mode=mode, threads=threads_from_config(cfg))
    except ModelError as exc:
        raise ConfigError(f"sim: {exc}") from exc


def initial_boundary(cfg: dict, params, profit, knots) -> GridBoundary:
    init = cfg["run"].get("init")
    zeta = _get(cfg, "run.zeta")
    scaled = _get(cfg, "run.resolvent_scaled", bool)
    if isinstance(init, dict):
        if "exponential" in init:
            zeta = float(init["exponential"])
            init = "exponential"
        elif "file" in init:
            init = init["file"]
        else:
            raise ConfigError(f"run.init: unrecognised {init!r}")
    if init == "exponential":
        try:
            return init_exponential(params, profit, zeta, knots, resolvent_scaled=scaled)
        except ModelError as exc:
            raise ConfigError(f"run.init: {exc}") from exc
    if init == "linear":
        return init_linear(params, profit, knots)
    if not isinstance(init, str) or not Path(init).is_file():
        raise ConfigError(f"run.init: not 'exponential', 'linear' or an existing file: {init!r}")
    g = read_boundary_csv(init)
    if g.knots.shape != knots.shape or np.any(np.abs(g.knots - knots) > 1e-9):
        raise ConfigError(f"run.init: {init} is not on the configured x-grid")
    return g


# --- output helpers ------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_summary(out: Path, command: str, cfg: dict, payload: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "config": cfg}
    doc.update(payload)
    (out / "summary.json").write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def _write_rows(path: Path, header, rows) -> None:
    def fmt(v):
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.17g}"
        return str(v)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(v) for v in r) + "\n")


def _write_iterates(out: Path, iterates) -> None:
    for k, g in enumerate(iterates):
        write_boundary_csv(out / f"boundary_{k}.csv", g)


def smoothed(values, window: int = 3) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size < window:
        return v
    return np.convolve(v, np.ones(window) / window, mode="valid")


def first_below(values, level: float):
    """1-based index of the first entry below ``level``; None if there is none."""
    for k, v in enumerate(values, start=1):
        if v < level:
            return k
    return None


# --- commands --------------------------------------------------------------

def cmd_closed_form(cfg: dict, out: Path, figures: bool = False) -> int:
    params, profit = model_from_config(cfg)
    knots, ys = grid_from_config(cfg), y_axis(cfg)
    sol = ClosedFormSolution(params, profit)
    g = sol.to_grid(knots)
    write_boundary_csv(out / "g_lambda.csv", g)
    write_value_surface(out / "value_surface.csv", sol, knots, ys, column="v")
    roots = sol.roots
    write_summary(out, "closed-form", cfg, {
        "alpha_minus": roots.alpha_minus, "alpha_plus": roots.alpha_plus,
        "y_floor": sol.y_floor, "b_star": classical_boundary(params, profit), "x_hat": sol.x_hat,
    })
    if figures:
        from . import plotting
        plotting.boundary_figure(out / "g_lambda.png", [g], picks=[0])
    return EXIT_OK


def cmd_pi(cfg: dict, out: Path, figures: bool = False) -> int:
    params, profit = model_from_config(cfg)
    knots = grid_from_config(cfg)
    g0 = initial_boundary(cfg, params, profit, knots)
    truth = ClosedFormSolution(params, profit).to_grid(knots)
    trace = run_pi(g0, params, profit, K=_get(cfg, "run.K", int), tol=_get(cfg, "run.tol"),
                   ground_truth=truth, strict=_get(cfg, "run.strict", bool))
    _write_iterates(out, trace.iterates)
    write_trace_csv(out / "trace.csv", trace)
    write_timing_csv(out / "timing.csv", trace)
    conds = [c.as_dict() for c in trace.condition_flags]
    write_summary(out, "pi", cfg, {
        "iterations": len(trace.iterates) - 1,
        "final_l1_to_truth": trace.l1_errors[-1],
        "final_sup_to_truth": sup_distance(trace.final, truth),
        "l1_to_truth": trace.l1_errors,
        "improvement_ok": all(trace.improvement_ok),
        "conditions_ok": all(all(c[k] for k in "abcd") for c in conds),
        "conditions": conds,
        "flagged_knots": [len(f) for f in trace.flagged_knots],
    })
    if figures:
        from . import plotting
        plotting.boundary_figure(out / "boundaries.png", trace.iterates, truth)
        plotting.l1_figure(out / "l1_trace.png", trace.l1_errors)
    return EXIT_OK


def _zero_order_config(cfg: dict) -> ZeroOrderConfig:
    try:
        return ZeroOrderConfig(y0=_get(cfg, "floor.y0"), c0=_get(cfg, "floor.c0"),
                               eta=_get(cfg, "floor.eta"), max_iters=_get(cfg, "floor.max_iters", int),
                               M_inner=_get(cfg, "floor.M_inner", int), margin=_get(cfg, "floor.margin"),
                               max_clamped=_get(cfg, "floor.max_clamped", int))
    except ValueError as exc:
        raise ConfigError(f"floor: {exc}") from exc


def cmd_spi(cfg: dict, out: Path, figures: bool = False) -> int:
    params, profit = model_from_config(cfg)
    knots = grid_from_config(cfg)
    y_axis(cfg)
    pcfg = path_config(cfg)
    try:
        scfg = SpiConfig(delta_x=_get(cfg, "grid.delta_x"), delta_y=_get(cfg, "grid.delta_y"),
                         x_bar=_get(cfg, "grid.x_bar"), M=_get(cfg, "sim.M", int), K=_get(cfg, "run.K", int),
                         path_cfg=pcfg, tol=_get(cfg, "run.spi_tol"),
                         x_scheme=_get(cfg, "run.x_scheme", str))
    except BoundaryError as exc:
        raise ConfigError(str(exc)) from exc
    g0 = initial_boundary(cfg, params, profit, knots)
    sim = Simulator(params, profit, pcfg)
    floor_mode = cfg["run"].get("floor")
    floor_info = {"mode": floor_mode}
    if floor_mode == "analytic":
        floor = y_floor(params)
    elif floor_mode == "learned":
        res = learn_y_floor(_zero_order_config(cfg), sim)
        floor = res.y
        floor_info["iterations"] = len(res.trace)
    elif isinstance(floor_mode, (int, float)) and not isinstance(floor_mode, bool) and 0 < floor_mode < 1:
        floor = float(floor_mode)
    else:
        raise ConfigError(f"run.floor: expected 'analytic', 'learned' or a number in (0, 1), got {floor_mode!r}")
    floor_info["value"] = floor
    if _get(cfg, "run.strict", bool):
        vals = g0.values.copy()
        vals[0] = floor
        pinned = g0.with_values(np.maximum.accumulate(vals))
        report = validate_initial(pinned, params, profit, floor_tol=math.inf)
        if not report.ok:
            raise InitializationError(report.violations)
    truth = ClosedFormSolution(params, profit).to_grid(knots)
    trace = run_spi(g0, scfg, sim, ground_truth=truth, floor=floor,
                    keep_tables=_get(cfg, "run.write_tables", bool))
    _write_iterates(out, trace.iterates)
    for k, table in enumerate(trace.tables):
        table.to_csv(out / f"u_bar_{k}.csv")
    write_trace_csv(out / "trace.csv", trace)
    write_timing_csv(out / "timing.csv", trace)
    write_summary(out, "spi", cfg, {
        "iterations": len(trace.iterates) - 1,
        "final_l1_to_truth": trace.l1_errors[-1],
        "min_l1_to_truth": min(trace.l1_errors),
        "final_sup_to_truth": sup_distance(trace.final, truth),
        "l1_to_truth": trace.l1_errors,
        "l1_steps": trace.l1_steps,
        "first_step_below_0.01": first_below(trace.l1_steps, 0.01),
        "floor": floor_info,
        "flagged_knots": [len(f) for f in trace.flagged_knots],
    })
    if figures:
        from . import plotting
        plotting.boundary_figure(out / "boundaries.png", trace.iterates, truth)
        plotting.l1_figure(out / "l1_trace.png", trace.l1_errors)
    return EXIT_OK


def cmd_sweep(cfg: dict, out: Path, figures: bool = False) -> int:
    params, profit = model_from_config(cfg, need_lambda=False)
    lambdas = cfg["run"].get("lambdas")
    ys = cfg["run"].get("sweep_y")
    if not lambdas or not isinstance(lambdas, list):
        raise ConfigError("run.lambdas must be a nonempty list")
    if not ys or not isinstance(ys, list):
        raise ConfigError("run.sweep_y must be a nonempty list")
    try:
        results = [vanishing_sweep(params, profit, lambdas, float(y)) for y in ys]
    except ModelError as exc:
        raise ConfigError(f"sweep: {exc}") from exc
    rows = [r for res in results for r in res.rows]
    _write_rows(out / "sweep.csv", ("lambda", "y", "b_lambda", "b_star", "gap"),
                [(r.lam, r.y, r.b_lambda, r.b_star, r.gap) for r in rows])
    per_y = []
    for res in results:
        gaps = np.abs(res.gaps())
        per_y.append({"y": res.rows[0].y, "direction": res.direction,
                      "abs_gap_nonincreasing": bool(np.all(np.diff(gaps) <= 1e-12)),
                      "gaps": res.gaps().tolist()})
    write_summary(out, "sweep", cfg, {"b_star": results[0].b_star, "per_y": per_y})
    if figures:
        from . import plotting
        plotting.sweep_figure(out / "sweep.png", rows)
    return EXIT_OK


def cmd_learn_floor(cfg: dict, out: Path, figures: bool = False) -> int:
    params, profit = model_from_config(cfg)
    zcfg = _zero_order_config(cfg)
    target = y_floor(params)
    noiseless = _get(cfg, "run.noiseless", bool)
    if noiseless:
        tr = params.temperature_ratio
        objective = lambda y: -params.kappa * y - tr * (y * math.log(y) if y > 0 else 0.0)
        run = lambda: learn_y_floor(zcfg, objective=objective)
    else:
        sim = Simulator(params, profit, path_config(cfg))
        run = lambda: learn_y_floor(zcfg, sim)
    header = ("i", "y_i", "estimate", "eps_i")
    try:
        res = run()
    except FloorDivergence as exc:
        _write_rows(out / "floor_trace.csv", header, exc.trace)
        write_summary(out, "learn-floor", cfg, {"diverged": True, "message": str(exc), "target": target})
        raise
    _write_rows(out / "floor_trace.csv", header, res.trace)
    write_summary(out, "learn-floor", cfg, {
        "diverged": False, "learned_y_floor": res.y, "target": target,
        "abs_error": abs(res.y - target), "noiseless": noiseless, "iterations": len(res.trace),
    })
    if figures:
        from . import plotting
        plotting.floor_figure(out / "floor_trace.png", res.trace, target)
    return EXIT_OK


def cmd_hjb_check(cfg: dict, out: Path, figures: bool = False) -> int:
    params, profit = model_from_config(cfg)
    sol = ClosedFormSolution(params, profit)
    x_bar = _get(cfg, "grid.x_bar")
    nx, ny = _get(cfg, "run.hjb_nx", int), _get(cfg, "run.hjb_ny", int)
    h, tol = _get(cfg, "run.hjb_h"), _get(cfg, "run.hjb_tol")
    xs = np.linspace(0.05, x_bar, nx)
    ys = np.linspace(0.0, 1.0, ny)
    res = hjb_residual(sol, xs, ys, h)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    min_dy = float(np.min(sol.value_dy(X, Y)[Y > 0]))
    fit = smooth_fit(sol, xs, _get(cfg, "run.smooth_fit_h"))
    fit_tol = _get(cfg, "run.smooth_fit_tol")
    checks = {
        "exploration_residual": res.max_exploration <= tol,
        "stopping_residual": res.max_stopping <= tol,
        "value_dy_nonnegative": min_dy >= -1e-8,
        "smooth_fit_dy": fit.max_dy <= fit_tol,
        "smooth_fit_dxy": fit.max_dxy <= fit_tol,
    }
    write_summary(out, "hjb-check", cfg, {
        "max_abs_residual_exploration": res.max_exploration,
        "max_residual_stopping": res.max_stopping,
        "min_value_dy": min_dy,
        "smooth_fit_max_dy": fit.max_dy,
        "smooth_fit_max_dxy": fit.max_dxy,
        "checks": checks, "ok": all(checks.values()),
    })
    return EXIT_OK if all(checks.values()) else EXIT_NUMERICAL


HANDLERS = {"closed-form": cmd_closed_form, "pi": cmd_pi, "spi": cmd_spi, "sweep": cmd_sweep,
            "learn-floor": cmd_learn_floor, "hjb-check": cmd_hjb_check}


# --- entry point ------------------------------------------------------------

class _Override(argparse.Action):
    """Collects --set/--seed/--threads in command-line order."""

    def __call__(self, parser, ns, value, option_string=None):
        pairs = list(getattr(ns, "overrides", None) or [])
        if option_string == "--seed":
            pairs.append(("sim.seed", _parse_value(value)))
        elif option_string == "--threads":
            pairs.append(("sim.threads", _parse_value(value)))
        else:
            if "=" not in value:
                parser.error(f"--set expects key=value, got {value!r}")
            key, raw = value.split("=", 1)
            pairs.append((key.strip(), _parse_value(raw)))
        ns.overrides = pairs


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="estop", description=__doc__.splitlines()[0])
    ap.add_argument("command", nargs="?", choices=COMMANDS,
                    help="what to run (default: run.command from the config)")
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--out", help="output directory (default: run.output)")
    ap.add_argument("--seed", action=_Override, help="master seed, unsigned 64-bit")
    ap.add_argument("--threads", action=_Override, help="worker threads, 0 = all cores")
    ap.add_argument("--set", action=_Override, metavar="KEY=VALUE",
                    help="override a config key, e.g. model.lambda=0.5 (repeatable)")
    ap.add_argument("--figures", action="store_true", help="also render PNG figures")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.set_defaults(overrides=[])
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        command = args.command or cfg["run"].get("command")
        if command not in COMMANDS:
            raise ConfigError(f"no command given (choose from {', '.join(COMMANDS)})")
        cfg["run"]["command"] = command
        out = Path(args.out or cfg["run"].get("output") or "out")
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[command](cfg, out, args.figures)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InitializationError as exc:
        print("initial boundary violates:\n  " + "\n  ".join(exc.violations), file=sys.stderr)
        return EXIT_ASSUMPTION
    except AssumptionViolation as exc:
        print(f"assumption violation: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (FloorDivergence, RuntimeError, FloatingPointError, ModelError, BoundaryError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
