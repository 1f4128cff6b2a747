"""Matplotlib figures for simulation runs and solver traces."""

from __future__ import annotations

import re
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG output byte-stable between runs
PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=110, metadata=PNG_META)
    plt.close(fig)
    return path


def chains(scenario):
    """Group links into chains by name prefix ("gp0", "gp1" -> "gp")."""
    groups = defaultdict(list)
    for l in scenario.links:
        m = re.match(r"^(.*?)(\d+)$", l.name)
        key, order = (m.group(1), int(m.group(2))) if m else (l.name, 0)
        groups[key].append((order, l))
    return {k: [l for _, l in sorted(v, key=lambda t: t[0])] for k, v in sorted(groups.items())}


def space_time(result, path):
    """Total-density heatmap, one panel per chain."""
    sc = result.scenario
    groups = chains(sc)
    t = np.array([s.t for s in result.snapshots])
    fig, axes = plt.subplots(len(groups), 1, figsize=(7, 2.4 * len(groups)), sharex=True, squeeze=False)
    for ax, (name, links) in zip(axes[:, 0], groups.items()):
        rho = np.array([
            np.concatenate([s.densities[l.name].sum(axis=1) / l.fd.jam_density for l in links])
            for s in result.snapshots
        ])
        edges = np.concatenate([[0.0], np.cumsum([l.cell_length for l in links for _ in range(l.n_cells)])])
        t_edges = np.concatenate([t, [t[-1] + (t[-1] - t[-2] if len(t) > 1 else sc.dt)]])
        mesh = ax.pcolormesh(t_edges, edges, rho.T, shading="flat", vmin=0.0, vmax=1.0, cmap="viridis")
        ax.set_ylabel(f"{name}: x")
        fig.colorbar(mesh, ax=ax, label="density / jam")
    axes[-1, 0].set_xlabel("t")
    fig.suptitle(f"{sc.name}: occupancy")
    fig.tight_layout()
    return _save(fig, path)


def split_history(result, path):
    """Solver-assigned split ratios of unknown movements over time."""
    sc = result.scenario
    fig, ax = plt.subplots(figsize=(7, 3.2))
    drawn = False
    for nd in sc.nodes:
        if not nd.unknown:
            continue
        for (i, j, c) in sorted(nd.unknown):
            pts = [(s.t, s.nodes[nd.name].beta[i, j, c]) for s in result.snapshots if nd.name in s.nodes]
            if not pts:
                continue
            ts, vals = zip(*pts)
            ax.plot(ts, vals, label=f"{nd.name}: {nd.inputs[i]}->{nd.outputs[j]} [{sc.classes[c]}]", lw=1.2)
            drawn = True
    ax.set_xlabel("t")
    ax.set_ylabel("split ratio")
    ax.set_ylim(-0.02, 1.02)
    if drawn:
        ax.legend(fontsize=6, ncol=2, loc="best")
    fig.tight_layout()
    return _save(fig, path)


def cumulative_counts(result, path):
    sc = result.scenario
    t = [s.t for s in result.snapshots]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    for c, name in enumerate(sc.classes):
        ax.plot(t, [s.entered[c] for s in result.snapshots], label=f"entered {name}")
        ax.plot(t, [s.exited[c] for s in result.snapshots], "--", label=f"exited {name}")
    ax.set_xlabel("t")
    ax.set_ylabel("vehicles")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def simulation_figures(result, out_dir):
    out_dir = Path(out_dir)
    return [
        space_time(result, out_dir / "space_time.png"),
        split_history(result, out_dir / "splits.png"),
        cumulative_counts(result, out_dir / "cumulative.png"),
    ]


def trace_figure(problem, traces, path, movements=None):
    """Assigned split of each unknown movement against iteration, one line
    style per trace (e.g. per balance rule)."""
    if movements is None:
        movements = sorted(problem.unknown)
    fig, ax = plt.subplots(figsize=(6.5, 3.4))
    styles = ["-o", "--s", ":^", "-.d"]
    for (label, trace), style in zip(traces.items(), styles):
        ks = [s.k for s in trace.snapshots]
        for (i, j, c) in movements:
            ax.plot(
                ks,
                [s.beta_tilde[i, j, c] for s in trace.snapshots],
                style,
                ms=3,
                lw=1,
                label=f"{label}: {problem.input_labels[i]}->{problem.output_labels[j]} [{problem.class_labels[c]}]",
            )
    ax.set_xlabel("iteration k")
    ax.set_ylabel("assigned split")
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    return _save(fig, path)
