"""Figures for CLI reports: traces, marginal posteriors and elasticity bars.

Everything renders off-screen with the Agg backend; PNG metadata is stripped
so that identical inputs give byte-identical files.
"""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}
CHAIN_COLORS = ("#1f4e79", "#c0504d", "#4f8a3c", "#8064a2", "#f79646", "#4bacc6")


def _grid(n, ncols=3, panel=(2.6, 1.9)):
    ncols = max(1, min(ncols, n))
    nrows = math.ceil(n / ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(panel[0] * ncols, panel[1] * nrows), squeeze=False)
    for ax in axes.ravel()[n:]:
        ax.set_visible(False)
    return fig, axes.ravel()[:n]


def save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _selected(draws, names):
    names = list(names) if names is not None else list(draws.names)
    return names, [draws.index(n) for n in names]


def plot_traces(draws, path, names=None):
    """One panel per parameter, one line per chain."""
    names, idx = _selected(draws, names)
    with plt.rc_context(STYLE):
        fig, axes = _grid(len(names))
        for ax, name, k in zip(axes, names, idx):
            for c in range(draws.n_chains):
                ax.plot(draws.iterations, draws.values[c, :, k], lw=0.5,
                        color=CHAIN_COLORS[c % len(CHAIN_COLORS)], label=f"chain {c + 1}")
            ax.set_title(name)
            ax.set_xlabel("iteration")
        if draws.n_chains > 1:
            axes[0].legend(frameon=False)
        return save(fig, path)


def plot_posteriors(draws, path, names=None, truth=None, bins=40):
    """Histogram of pooled draws per parameter with the true value marked if given."""
    names, idx = _selected(draws, names)
    truth = truth or {}
    with plt.rc_context(STYLE):
        fig, axes = _grid(len(names))
        pooled = draws.pooled()
        for ax, name, k in zip(axes, names, idx):
            ax.hist(pooled[:, k], bins=bins, density=True, color="#9bb7d4", edgecolor="#1f4e79", lw=0.4)
            if name in truth:
                ax.axvline(truth[name], color="#c0504d", lw=1.2, label="true value")
                ax.legend(frameon=False)
            ax.set_title(name)
            ax.set_yticks([])
        return save(fig, path)


def plot_elasticities(rows, alternative_names, path):
    """Grouped bars: one group per scenario, one bar per alternative.

    ``rows`` is a sequence of (label, elasticity vector).
    """
    labels = [r[0] for r in rows]
    values = np.array([r[1] for r in rows], float)
    J = values.shape[1]
    width = 0.8 / J
    x = np.arange(len(rows))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.4 * len(rows)), 2.8))
        for j in range(J):
            ax.bar(x + (j - (J - 1) / 2) * width, np.nan_to_num(values[:, j]), width,
                   label=f"Alt. {alternative_names[j]}", color=CHAIN_COLORS[j % len(CHAIN_COLORS)])
        ax.axhline(0.0, color="black", lw=0.6)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=15, ha="right")
        ax.set_ylabel("aggregate arc elasticity")
        ax.legend(frameon=False, ncol=J)
        return save(fig, path)


def plot_calibration(choices, probs, path, bins=10):
    """Reliability diagram pooled over alternatives."""
    probs = np.asarray(probs, float)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(choices)), np.asarray(choices) - 1] = 1.0
    p, o = probs.ravel(), onehot.ravel()
    edges = np.linspace(0.0, 1.0, bins + 1)
    which = np.clip(np.digitize(p, edges) - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)
    keep = counts > 0
    mean_p = np.bincount(which, weights=p, minlength=bins)[keep] / counts[keep]
    mean_o = np.bincount(which, weights=o, minlength=bins)[keep] / counts[keep]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 3.0))
        ax.plot([0, 1], [0, 1], color="grey", lw=0.8, ls="--")
        ax.plot(mean_p, mean_o, marker="o", ms=3, color="#1f4e79")
        ax.set_xlabel("predicted probability")
        ax.set_ylabel("observed frequency")
        return save(fig, path)
