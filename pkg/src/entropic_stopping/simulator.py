"""Monte Carlo environment: GBM paths, the reflected weight process and its discounted reward.

Paths are generated on the unit start X_0 = 1 in log space and scaled by x,
which is exact for geometric Brownian motion. Randomness is organised in
fixed-size blocks of paths; each block draws from its own PCG64 stream,
spawned from the master seed with a key (tag, k, i, j, block). Results are
therefore independent of the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .model import ModelError, ModelParams, ProfitModel, profit_function
from .reflection import xlogx

MODES = ("common_random_numbers", "independent")
BLOCK = 256
_CACHE_LIMIT = 4_000_000  # floats kept in memory per ensemble array


@dataclass(frozen=True)
class PathConfig:
    dt: float = 0.01
    horizon: float = 30.0
    seed: int = 0
    mode: str = "common_random_numbers"
    tail_tol: float = 1e-4
    bridge: bool = True   # sample the exact per-step minimum of the log path
    threads: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0):
            raise ModelError("dt and horizon must be positive")
        if self.mode not in MODES:
            raise ModelError(f"mode must be one of {MODES}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ModelError("seed must be an unsigned 64-bit integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def check_tail(self, rho: float) -> None:
        if math.exp(-rho * self.horizon) > self.tail_tol:
            need = math.log(1.0 / self.tail_tol) / rho
            raise ModelError(f"horizon {self.horizon} too short: exp(-rho T) > {self.tail_tol}; use T >= {need:.3g}")

    def with_seed(self, seed: int) -> "PathConfig":
        return replace(self, seed=int(seed))


def _rng(seed: int, key) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


class UnitPathEnsemble:
    """M unit-start GBM paths on the time grid 0, dt, ..., T.

    ``log_path`` holds log X_t and ``log_min`` its running minimum (including
    the Brownian-bridge minimum inside each step when ``cfg.bridge``).
    Blocks are regenerated on demand from their streams when the ensemble is
    too large to cache.
    """

    def __init__(self, params: ModelParams, cfg: PathConfig, M: int, key=()):
        if M < 1:
            raise ModelError("M must be positive")
        self.params, self.cfg, self.M, self.key = params, cfg, int(M), tuple(key)
        self.n_steps = cfg.n_steps
        self.n_blocks = -(-self.M // BLOCK)
        self._cache = {} if self.M * (self.n_steps + 1) <= _CACHE_LIMIT else None

    def block_size(self, b: int) -> int:
        return min(BLOCK, self.M - b * BLOCK)

    def _make_block(self, b: int):
        p, cfg = self.params, self.cfg
        rng = _rng(cfg.seed, self.key + (b,))
        n, dt = self.n_steps, cfg.dt
        z = rng.standard_normal((self.block_size(b), n))
        sd = p.sigma * math.sqrt(dt)
        inc = (p.mu - 0.5 * p.sigma ** 2) * dt + sd * z
        log_path = np.zeros((z.shape[0], n + 1))
        np.cumsum(inc, axis=1, out=log_path[:, 1:])
        if cfg.bridge:
            u = rng.random(z.shape)
            a, c = log_path[:, :-1], log_path[:, 1:]
            # minimum of a Brownian bridge from a to c over one step
            step_min = 0.5 * (a + c - np.sqrt((c - a) ** 2 - 2.0 * sd * sd * np.log1p(-u)))
            low = np.concatenate([np.zeros((z.shape[0], 1)), step_min], axis=1)
        else:
            low = log_path
        log_min = np.minimum.accumulate(low, axis=1)
        return log_path, log_min

    def block(self, b: int):
        if self._cache is None:
            return self._make_block(b)
        if b not in self._cache:
            self._cache[b] = self._make_block(b)
        return self._cache[b]

    def blocks(self):
        for b in range(self.n_blocks):
            yield self.block(b)


class Simulator:
    """Environment returning discounted rewards of the reflection policy of a boundary g."""

    def __init__(self, params: ModelParams, profit: ProfitModel, cfg: PathConfig = None):
        self.params = params
        self.cfg = cfg or PathConfig()
        self.cfg.check_tail(params.rho)
        self.pi = profit_function(profit)
        n = self.cfg.n_steps
        t = np.arange(n + 1) * self.cfg.dt
        w = np.full(n + 1, self.cfg.dt)
        w[0] = w[-1] = 0.5 * self.cfg.dt
        self.weights = w * np.exp(-params.rho * t)

    def ensemble(self, M: int, key=()) -> UnitPathEnsemble:
        return UnitPathEnsemble(self.params, self.cfg, M, key)

    def _block_rewards(self, x: float, ys: np.ndarray, g, log_path, log_min) -> np.ndarray:
        p, w = self.params, self.weights
        if x > 0:
            X = x * np.exp(log_path)
            G = np.asarray(g.eval(x * np.exp(log_min)))
            drift = (self.pi(X) - p.rho * p.kappa) * w
        else:
            G = np.full(log_path.shape, g.eval(0.0))
            drift = np.broadcast_to(-p.rho * p.kappa * w, log_path.shape)
        # G is nonincreasing in time, so Y = min(y, G) equals y on a prefix of
        # length tau and G afterwards; split every reward at tau.
        lw = np.broadcast_to(p.lam * w, G.shape)
        zero = np.zeros((G.shape[0], 1))
        pre_drift = np.concatenate([zero, np.cumsum(drift, axis=1)], axis=1)
        pre_lw = np.concatenate([zero, np.cumsum(lw, axis=1)], axis=1)
        tail = np.concatenate([zero, np.cumsum(drift * G - xlogx(G) * lw, axis=1)], axis=1)
        tail = tail[:, -1:] - tail
        # entries >= y in each nonincreasing row, by bisection on the reversed row
        n = G.shape[1]
        tau = np.empty((G.shape[0], ys.size), dtype=np.intp)
        for r in range(G.shape[0]):
            tau[r] = n - np.searchsorted(G[r, ::-1], ys, side="left")
        take = lambda a: np.take_along_axis(a, tau, axis=1)
        return ys * take(pre_drift) - xlogx(ys) * take(pre_lw) + take(tail)

    def rewards(self, x: float, ys, g, ens: UnitPathEnsemble) -> np.ndarray:
        """Per-path rewards, shape (M, len(ys)), in fixed block order."""
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        if np.any((ys < 0) | (ys > 1)) or x < 0:
            raise ModelError("need x >= 0 and y in [0, 1]")
        if x == 0:
            # X stays at 0: every path earns the same reward, no draws needed
            flat = np.zeros((1, ens.n_steps + 1))
            return np.repeat(self._block_rewards(0.0, ys, g, flat, flat), ens.M, axis=0)
        job = lambda b: self._block_rewards(float(x), ys, g, *ens.block(b))
        if self.cfg.threads > 1 and ens.n_blocks > 1:
            with ThreadPoolExecutor(self.cfg.threads) as pool:
                parts = list(pool.map(job, range(ens.n_blocks)))
        else:
            parts = [job(b) for b in range(ens.n_blocks)]
        return np.concatenate(parts, axis=0)

    def simulate_reward(self, x: float, y: float, g, ens: UnitPathEnsemble, m: int = 0) -> float:
        """Reward along path m of the ensemble."""
        b, r = divmod(m, BLOCK)
        lp, lm = ens.block(b)
        return float(self._block_rewards(float(x), np.array([y]), g, lp[r:r + 1], lm[r:r + 1])[0, 0])

    def mc_value(self, x: float, y: float, g, M: int, key=(0,)):
        """(mean, standard error) over M paths drawn from the stream ``key``."""
        if M < 2:
            raise ModelError("mc_value needs M >= 2")
        r = self.rewards(x, [y], g, self.ensemble(M, key))[:, 0]
        return float(r.mean()), float(r.std(ddof=1) / math.sqrt(M))

    def value_samples(self, xs, ys, g, M: int, k: int = 0) -> np.ndarray:
        """Per-path rewards on the product grid, shape (M, len(xs), len(ys)).

        In common-random-numbers mode one ensemble (keyed by k) serves every
        node; in independent mode node (i, j) draws from its own stream.
        """
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        out = np.empty((M, xs.size, ys.size))
        if self.cfg.mode == "common_random_numbers":
            ens = self.ensemble(M, (1, k))
            # block-outer loop: each block of paths is drawn once for all columns
            def fill(b):
                lp, lm = ens.block(b)
                rows = slice(b * BLOCK, b * BLOCK + lp.shape[0])
                for i, x in enumerate(xs):
                    if x == 0:
                        flat = np.zeros((1, lp.shape[1]))
                        out[rows, i, :] = self._block_rewards(0.0, ys, g, flat, flat)
                    else:
                        out[rows, i, :] = self._block_rewards(float(x), ys, g, lp, lm)
            if np.any((ys < 0) | (ys > 1)) or np.any(xs < 0):
                raise ModelError("need x >= 0 and y in [0, 1]")
            if self.cfg.threads > 1 and ens.n_blocks > 1:
                with ThreadPoolExecutor(self.cfg.threads) as pool:
                    list(pool.map(fill, range(ens.n_blocks)))
            else:
                for b in range(ens.n_blocks):
                    fill(b)
        else:
            for i, x in enumerate(xs):
                for j, y in enumerate(ys):
                    out[:, i, j] = self.rewards(x, [y], g, self.ensemble(M, (2, k, i, j)))[:, 0]
        return out

    def value_grid(self, xs, ys, g, M: int, k: int = 0):
        """Sample means and standard errors on the product grid, shape (len(xs), len(ys))."""
        r = self.value_samples(xs, ys, g, M, k)
        se = r.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.full(r.shape[1:], np.nan)
        return r.mean(axis=0), se


def simulate_reward(sim: Simulator, x, y, g, ens, m: int = 0) -> float:
    return sim.simulate_reward(x, y, g, ens, m)


def mc_value(sim: Simulator, x, y, g, M: int, key=(0,)):
    return sim.mc_value(x, y, g, M, key)
