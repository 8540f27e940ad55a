"""PNG figures for the command-line runs (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def boundary_figure(path, iterates, truth=None, picks=None):
    """Learned boundaries at selected iterations, with the ground truth dashed."""
    n = len(iterates)
    if picks is None:
        picks = sorted(set(np.linspace(0, n - 1, min(n, 5)).round().astype(int)))
    fig, ax = plt.subplots(figsize=(5, 3.6))
    cmap = plt.get_cmap("viridis")
    for c, k in enumerate(picks):
        g = iterates[k]
        ax.plot(g.knots, g.values, color=cmap(c / max(len(picks) - 1, 1)), lw=1.2, label=f"k={k}")
    if truth is not None:
        ax.plot(truth.knots, truth.values, "k--", lw=1.5, label="truth")
    ax.set_xlabel("x")
    ax.set_ylabel("g(x)")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8, frameon=False)
    _save(fig, path)


def l1_figure(path, l1_errors, ylabel="L1 to truth"):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(np.arange(len(l1_errors)), l1_errors, "o-", ms=3)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel(ylabel)
    if np.all(np.asarray(l1_errors) > 0):
        ax.set_yscale("log")
    _save(fig, path)


def sweep_figure(path, rows):
    """b_lambda(y) against lambda for each y, with b* as a horizontal line."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for y in sorted({r.y for r in rows}, reverse=True):
        sel = [r for r in rows if r.y == y]
        ax.plot([r.lam for r in sel], [r.b_lambda for r in sel], "o-", ms=3, label=f"y={y:.3g}")
    ax.axhline(rows[0].b_star, color="k", ls="--", lw=1, label="b*")
    ax.set_xscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("b_lambda(y)")
    ax.legend(fontsize=8, frameon=False)
    _save(fig, path)


def floor_figure(path, trace, target=None):
    it = np.array([r[0] for r in trace])
    y = np.array([r[1] for r in trace])
    fig, ax = plt.subplots(figsize=(5, 3.6))
    if target is None:
        ax.plot(it, y, lw=1)
        ax.set_ylabel("y_i")
    else:
        ax.semilogy(it, np.maximum((y - target) ** 2, 1e-300), lw=1)
        ax.set_ylabel("(y_i - y*)^2")
    ax.set_xlabel("iteration")
    _save(fig, path)
