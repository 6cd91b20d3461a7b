"""Matplotlib renderers for the experiment outputs.

Figures are rendered to PNG next to the CSV data with fixed metadata so
that repeated runs produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_META = {"Software": "convlab"}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def _shade_states(ax, t, states):
    """Shade the stretches spent in regimes other than the first."""
    states = np.asarray(states)
    in_alt = states != states.min()
    if not in_alt.any():
        return
    edges = np.flatnonzero(np.diff(in_alt.astype(int)))
    bounds = np.concatenate(([0], edges + 1, [len(t) - 1]))
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if in_alt[lo]:
            ax.axvspan(t[lo], t[hi], color="0.9", zorder=0)


def weights_series(path, t, weights: dict, states=None) -> Path:
    fig, ax = plt.subplots(figsize=(9, 5))
    if states is not None:
        _shade_states(ax, t, states)
    for label, series in weights.items():
        ax.plot(t, series, label=label, lw=1.0)
    ax.set_xlabel("t")
    ax.set_ylabel("portfolio weight")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def value_curves(path, x, curves: dict, xlabel: str) -> Path:
    fig, ax = plt.subplots(figsize=(8, 5))
    for label, series in curves.items():
        style = "-" if label.startswith("rs") else "--"
        ax.plot(x, series, style, label=label, lw=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("value")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def full_vs_partial(path, t, full: dict, partial: dict, p1, states=None) -> Path:
    fig, axes = plt.subplots(2, 1, figsize=(9, 7), sharex=True,
                             gridspec_kw={"height_ratios": [3, 1]})
    if states is not None:
        _shade_states(axes[0], t, states)
    for label, series in full.items():
        axes[0].plot(t, series, label=label, lw=1.0)
    for label, series in partial.items():
        axes[0].plot(t, series, "--", label=f"{label}_p", lw=1.0)
    axes[0].set_ylabel("portfolio weight")
    axes[0].legend(ncol=3, fontsize=8)
    axes[1].plot(t, p1, color="k", lw=1.0)
    axes[1].set_ylabel("filtered p1")
    axes[1].set_xlabel("t")
    axes[1].set_ylim(-0.05, 1.05)
    fig.tight_layout()
    return _save(fig, path)


def loss_heatmap(path, ttm, p, L) -> Path:
    fig, ax = plt.subplots(figsize=(7, 5))
    mesh = ax.pcolormesh(p, ttm, L, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="loss of utility")
    ax.set_xlabel("filtered state probability p")
    ax.set_ylabel("time to maturity")
    fig.tight_layout()
    return _save(fig, path)
