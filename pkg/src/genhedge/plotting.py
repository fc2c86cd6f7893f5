"""Figures for the run report, drawn from the CSV tables the CLI writes.

Every function takes plain arrays, draws on a fresh figure and saves a PNG.
The Agg backend is forced so the module works without a display, and the
PNG metadata is fixed so repeated runs produce identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}

_PNG_METADATA = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def divergence_figure(levels, values, thresholds, path, lower_bound=None, xlabel="truncation level n"):
    """Partial risky values against the truncation level, with the thresholds."""
    levels = np.asarray(levels, dtype=float)
    values = np.asarray(values, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(levels, values, "o-", color="C0", label="partial risky value")
        if lower_bound is not None:
            ax.plot(levels, lower_bound, "s--", color="C2", ms=3, label="lower bound")
        top = np.max(np.abs(values)) if values.size else 1.0
        for t in thresholds:
            if t <= 1e3 * max(top, 1.0):  # far-off thresholds would only squash the data
                ax.axhline(t, color="C3", lw=0.8, ls=":")
        if np.all(values > 0):
            ax.set_yscale("log")
        if levels.max() / max(levels.min(), 1e-300) > 1e3:
            ax.set_xscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("value")
        ax.legend()
        return _save(fig, path)


def bank_position_figure(levels, positions, target, path):
    """Time-0 bank positions a^n_0 with the prescribed limit drawn when finite."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(levels, positions, "o-", label="a^n_0")
        if np.isfinite(target):
            ax.axhline(target, color="C3", lw=0.8, ls="--", label=f"C = {target:g}")
        ax.set_xlabel("truncation level n")
        ax.set_ylabel("bank position at t = 0")
        if np.all(np.asarray(positions) < 0) and np.ptp(positions) > 1e2:
            ax.set_yscale("symlog")
        ax.legend()
        return _save(fig, path)


def trajectory_figure(rows, path, dt):
    """a^n_t against t; one line per (path, level), coloured by level.

    ``rows`` holds (path, level, step, value) tuples.
    """
    rows = np.asarray(rows, dtype=float)
    levels = np.unique(rows[:, 1])
    cmap = plt.get_cmap("viridis", max(len(levels), 2))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for li, n in enumerate(levels):
            for p in np.unique(rows[:, 0]):
                sel = (rows[:, 1] == n) & (rows[:, 0] == p)
                ax.plot(rows[sel, 2] * dt, rows[sel, 3], color=cmap(li), lw=0.8,
                        label=f"n = {int(n)}" if p == rows[0, 0] else None)
        ax.set_xlabel("t")
        ax.set_ylabel("bank position")
        if np.ptp(rows[:, 3]) > 1e3:
            ax.set_yscale("symlog")
        ax.legend(ncol=2)
        return _save(fig, path)


def c2_figure(levels, dist_sq, bound, path):
    """Mean-square distance of the value processes to the limit, with the isometry bound."""
    dist_sq = np.asarray(dist_sq, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        pos = dist_sq > 0
        ax.semilogy(np.asarray(levels)[pos], dist_sq[pos], "o-", label="E|Y^n_T - Y_T|^2")
        b = np.asarray(bound, dtype=float)
        ax.semilogy(np.asarray(levels)[b > 0], b[b > 0], "s--", ms=3, label="isometry bound")
        ax.set_xlabel("truncation level n")
        ax.set_ylabel("distance squared")
        ax.legend()
        return _save(fig, path)


def martingale_figure(maturities, mean, se, expected, path):
    """Monte Carlo mean of p_T(x) with a 3 SE band against p_0(T + x)."""
    maturities = np.asarray(maturities, dtype=float)
    mean, se = np.asarray(mean, dtype=float), np.asarray(se, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.fill_between(maturities, mean - 3 * se, mean + 3 * se, color="C0", alpha=0.25, label="3 SE band")
        ax.plot(maturities, mean, "o", color="C0", ms=3, label="sample mean")
        ax.plot(maturities, expected, "-", color="C3", lw=1, label="initial curve")
        ax.set_xlabel("time to maturity x")
        ax.set_ylabel("discounted price at T")
        ax.legend()
        return _save(fig, path)


def portfolio_figure(t, b, risky, total, path):
    """Bank position, risky value and total value of one hedge path."""
    with plt.rc_context(STYLE):
        fig, (top, bottom) = plt.subplots(2, 1, sharex=True)
        top.plot(t, total, lw=1, label="portfolio value")
        top.plot(t, risky, lw=1, label="risky value")
        top.legend()
        bottom.plot(t, b, lw=1, color="C2")
        bottom.set_ylabel("bank position")
        bottom.set_xlabel("t")
        return _save(fig, path)
