"""SVG figures for runs, the perturbation study and constraint maps.

Output is byte-stable for identical inputs: fixed hash salt, no date stamp.
"""
from __future__ import annotations

import os
import warnings

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

STYLE = {
    "svg.hashsalt": "softquad",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "legend.frameon": False,
}

LEG_LABELS = ("FL", "FR", "BL", "BR")


def _save(fig, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _empty(data, what):
    if data is None or len(data) == 0:
        warnings.warn(f"no {what} to plot; nothing written")
        return True
    return False


def height_tracking(t, pz, ref, path):
    if _empty(t, "trajectory samples"):
        return None
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(t, np.asarray(pz) * 100, label="CoM height")
        ax.axhline(ref * 100, color="k", ls="--", lw=0.8, label="reference")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("height [cm]")
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def velocities(t, v, ref, path):
    if _empty(t, "trajectory samples"):
        return None
    v = np.asarray(v)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(t, v[:, 0], label="$v_x$")
        ax.plot(t, v[:, 1], label="$v_y$")
        ax.axhline(ref[0], color="C0", ls="--", lw=0.8)
        ax.axhline(ref[1], color="C1", ls="--", lw=0.8)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("velocity [m/s]")
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def com_path(xy, path, heading=None, external=None):
    if _empty(xy, "path samples"):
        return None
    xy = np.asarray(xy)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.plot(xy[:, 0], xy[:, 1], label="simulated")
        if external is not None:
            ext = np.asarray(external)
            ax.plot(ext[:, 0], ext[:, 1], ".", ms=2, label="recorded")
        if heading is not None:
            r = np.hypot(*(xy[-1] - xy[0]))
            ax.plot([xy[0, 0], xy[0, 0] + r * np.cos(heading)],
                    [xy[0, 1], xy[0, 1] + r * np.sin(heading)], "k--", lw=0.8, label="ideal")
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def leg_forces(t, forces, path):
    if _empty(t, "force samples"):
        return None
    f = np.asarray(forces).reshape(len(t), 4, 3)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        for i in range(4):
            ax.plot(t, f[:, i, 2], label=LEG_LABELS[i])
        ax.set_xlabel("time [s]")
        ax.set_ylabel("$f_z$ [N]")
        ax.legend(ncol=4)
        fig.tight_layout()
        return _save(fig, path)


def cost_curves(series, path, threshold=0.01):
    """``series`` maps a label to ``(t, cost)``."""
    if _empty(series, "cost series"):
        return None
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for name, (t, c) in series.items():
            ax.semilogy(t, np.maximum(np.asarray(c), 1e-16), label=name)
        ax.axhline(threshold, color="k", ls=":", lw=0.8)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("stage cost")
        ax.legend(ncol=2, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def dcm_heatmap(t, legs, total, path):
    if _empty(t, "constraint map rows"):
        return None
    grid = np.column_stack([np.asarray(legs, dtype=float), np.asarray(total, dtype=float)]).T
    cmap = ListedColormap(["#d62728", "#2ca02c"])
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(6, 2))
        t = np.asarray(t)
        step = t[1] - t[0] if len(t) > 1 else 1.0
        ax.imshow(grid, aspect="auto", cmap=cmap, vmin=0, vmax=1, interpolation="nearest",
                  extent=(t[0], t[-1] + step, 4.5, -0.5))
        ax.set_yticks(range(5))
        ax.set_yticklabels(["Leg 1", "Leg 2", "Leg 3", "Leg 4", "Total"])
        ax.set_xlabel("time [s]")
        fig.tight_layout()
        return _save(fig, path)


def leg_shape(x, z, path, frames=None):
    """Overlay of rod centrelines, one per recorded frame."""
    if _empty(x, "rod frames"):
        return None
    x = np.asarray(x)
    z = np.asarray(z)
    idx = range(len(x)) if frames is None else frames
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        for k in idx:
            ax.plot(x[k] * 100, z[k] * 100, color="C0", alpha=0.4, lw=0.8)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x [cm]")
        ax.set_ylabel("z [cm]")
        fig.tight_layout()
        return _save(fig, path)
