"""Figures for the verify and sweep reports.

Everything renders with the Agg backend and without the software tag in
the PNG metadata, so reruns write identical files.
"""

from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402
import numpy as np  # noqa: E402

from .envgrid import EnvGrid  # noqa: E402
from .systems.base import Requirement  # noqa: E402

__all__ = ["plot_grid", "plot_tubes", "plot_sweep"]

_META = {"Software": None}


def _save(fig, path: str) -> None:
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def plot_grid(grid: EnvGrid, path: str, env_names: Sequence[str] = ("e0", "e1"),
              title: Optional[str] = None) -> None:
    """Active cells coloured by their last conformance estimate; removed cells grey."""
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    cmap = plt.get_cmap("viridis")
    for idx, box, active in grid.iter_cells():
        conf = grid.conformance[idx]
        if active:
            color = cmap(conf) if np.isfinite(conf) else cmap(1.0)
        else:
            color = (0.85, 0.85, 0.85)
        ax.add_patch(Rectangle(box.lo, *box.width, facecolor=color, edgecolor="white", linewidth=0.4))
    ax.plot(*grid.nominal, marker="*", color="red", markersize=10, linestyle="none", label="nominal")
    ax.set_xlim(grid.bounds.lo[0], grid.bounds.hi[0])
    ax.set_ylim(grid.bounds.lo[1], grid.bounds.hi[1])
    ax.set_xlabel(env_names[0])
    ax.set_ylabel(env_names[1])
    sm = plt.cm.ScalarMappable(cmap=cmap, norm=plt.Normalize(0.0, 1.0))
    fig.colorbar(sm, ax=ax, label="cell conformance")
    ax.legend(loc="upper right", fontsize=8)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path)


def plot_tubes(tubes: Sequence, requirement: Requirement, dims: Sequence[int], path: str,
               dt: float, state_names: Sequence[str], sims: Optional[np.ndarray] = None,
               title: Optional[str] = None) -> None:
    """Tube bounds and requirement boxes over time, one panel per state dim."""
    fig, axes = plt.subplots(len(dims), 1, figsize=(6.4, 2.2 * len(dims)), sharex=True, squeeze=False)
    mask = list(requirement.dim_mask)
    for ax, d in zip(axes[:, 0], dims):
        for tube in tubes:
            t = np.arange(tube.n_steps) * dt
            ax.fill_between(t, tube.lo[:, d], tube.hi[:, d], color="tab:red", alpha=0.25, linewidth=0)
        if d in mask:
            j = mask.index(d)
            t = np.arange(requirement.lo.shape[0]) * dt
            ax.plot(t, requirement.lo[:, j], color="black", linewidth=0.8)
            ax.plot(t, requirement.hi[:, j], color="black", linewidth=0.8)
        if sims is not None:
            t = np.arange(sims.shape[1]) * dt
            for s in sims:
                ax.plot(t, s[:, d], color="tab:blue", linewidth=0.5, alpha=0.7)
        ax.set_ylabel(state_names[d])
    axes[-1, 0].set_xlabel("time [s]")
    if title:
        axes[0, 0].set_title(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path)


def plot_sweep(bounds: np.ndarray, rates: np.ndarray, path: str, env_names: Sequence[str] = ("e0", "e1"),
               title: Optional[str] = None) -> None:
    """Violation rate per environment cell; ``bounds`` rows are ``(lo0, lo1, hi0, hi1)``."""
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    cmap = plt.get_cmap("magma")
    for (l0, l1, h0, h1), r in zip(bounds, rates):
        ax.add_patch(Rectangle((l0, l1), h0 - l0, h1 - l1, facecolor=cmap(r), edgecolor="white", linewidth=0.4))
    ax.set_xlim(bounds[:, 0].min(), bounds[:, 2].max())
    ax.set_ylim(bounds[:, 1].min(), bounds[:, 3].max())
    ax.set_xlabel(env_names[0])
    ax.set_ylabel(env_names[1])
    sm = plt.cm.ScalarMappable(cmap=cmap, norm=plt.Normalize(0.0, 1.0))
    fig.colorbar(sm, ax=ax, label="violation rate")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path)
