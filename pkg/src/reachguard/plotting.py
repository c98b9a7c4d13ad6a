"""SVG line charts of training metrics and feasible-set heat maps."""

from __future__ import annotations

import os
from collections import OrderedDict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DataError  # noqa: E402

CHARTS = (("episode_return", "episode return", "episode_return.svg"),
          ("episode_violations", "episode constraint violations", "episode_violations.svg"),
          ("cumulative_training_violations", "cumulative training violations",
           "cumulative_violations.svg"))


def _column(rows, key):
    return np.array([float(r[key]) if r[key] != "" else np.nan for r in rows])


def group_runs(runs):
    """Group ``[(label, config_hash, header, rows)]`` by config hash, keeping order."""
    groups = OrderedDict()
    for label, chash, header, rows in runs:
        groups.setdefault(chash, []).append((label, header, rows))
    return groups


def plot_runs(runs, out_dir):
    """Write the three metric charts; returns the written paths.

    Runs sharing a config hash are drawn as their mean with a min/max band
    (aligned on episode index); unique runs are drawn as plain lines.
    """
    if not runs:
        raise DataError("no runs to plot")
    headers = {tuple(h) for _, _, h, _ in runs}
    if len(headers) > 1:
        raise DataError("metrics CSV headers differ between runs")
    for label, _, _, rows in runs:
        if not rows:
            raise DataError(f"metrics CSV of {label} has no rows")
    os.makedirs(out_dir, exist_ok=True)
    groups = group_runs(runs)
    paths = []
    for key, title, fname in CHARTS:
        fig, ax = plt.subplots(figsize=(6, 4))
        for chash, members in groups.items():
            if len(members) == 1:
                label, _, rows = members[0]
                ax.plot(_column(rows, "env_steps"), _column(rows, key), label=label)
                continue
            n = min(len(rows) for _, _, rows in members)
            steps = np.mean([_column(rows, "env_steps")[:n] for _, _, rows in members], axis=0)
            ys = np.stack([_column(rows, key)[:n] for _, _, rows in members])
            line, = ax.plot(steps, ys.mean(axis=0), label=f"{chash} (n={len(members)})")
            ax.fill_between(steps, ys.min(axis=0), ys.max(axis=0), color=line.get_color(),
                            alpha=0.25, linewidth=0)
        ax.set_xlabel("environment steps")
        ax.set_ylabel(title)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = os.path.join(out_dir, fname)
        fig.savefig(path, format="svg")
        plt.close(fig)
        paths.append(path)
    return paths


def plot_feasible(cert, analytic, path):
    """Heat map of the greedy certificate with learned and analytic boundaries."""
    fig, ax = plt.subplots(figsize=(5, 4))
    extent = [cert.vs[0], cert.vs[-1], cert.xs[0], cert.xs[-1]]
    im = ax.imshow(cert.value(), origin="lower", extent=extent, aspect="auto", cmap="coolwarm")
    fig.colorbar(im, ax=ax, label="min_a Q_h")
    V, X = np.meshgrid(cert.vs, cert.xs)
    ax.contour(V, X, cert.value(), levels=[0.0], colors="k", linewidths=1.2)
    if analytic is not None:
        ax.contour(V, X, analytic.astype(float), levels=[0.5], colors="w", linestyles="--",
                   linewidths=1.0)
    ax.set_xlabel("v")
    ax.set_ylabel("x")
    ax.set_title("feasible set (black: grid certificate, white: braking bound)", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
