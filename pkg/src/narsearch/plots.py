"""Figure rendering for search and demo reports.

Every figure is derived from data that is also written as CSV/JSON; the
delimited files stay the canonical record and the PNGs are a convenience
rendered next to them.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_FIGSIZE = (7.0, 4.2)
_DPI = 150


def _new_axes(title, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_search_history(history, path):
    """Mean/best reward curve plus head gradient norms for one search run."""
    steps = [h.step for h in history]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 6.0), sharex=True)
    ax1.plot(steps, [h.mean_reward for h in history], label="mean batch reward", alpha=0.8)
    ax1.plot(steps, [h.best_so_far for h in history], label="best so far", lw=2)
    ax1.set_ylabel("reward")
    ax1.legend()
    ax1.grid(True, alpha=0.3)
    ax2.plot(steps, [h.op_grad_norm for h in history], label="operator head", alpha=0.8)
    ax2.plot(steps, [h.skip_grad_norm for h in history], label="skip head", alpha=0.8)
    ax2.set_xlabel("controller update")
    ax2.set_ylabel("gradient norm")
    ax2.legend()
    ax2.grid(True, alpha=0.3)
    _save(fig, path)


def plot_grad_norm_series(series_by_seed, path):
    """Operator vs skip head gradient-norm traces across seeds.

    series_by_seed: {seed: (op_norms, skip_norms)}.
    """
    fig, ax = _new_axes("Gradient magnitudes per controller update",
                        "controller update", "gradient norm (L2)")
    for i, (seed, (op, sk)) in enumerate(sorted(series_by_seed.items())):
        label_op = "operator head" if i == 0 else None
        label_sk = "skip head" if i == 0 else None
        ax.plot(op, color="tab:blue", alpha=0.5, label=label_op)
        ax.plot(sk, color="tab:red", alpha=0.5, label=label_sk)
    ax.legend()
    _save(fig, path)


def plot_bias_densities(joint_densities, optimum_density, nar_density, path):
    """Per-seed joint-search skip densities against the two reference lines."""
    fig, ax = _new_axes("Skip density under a biased proxy oracle",
                        "seed", "skip density of final argmax")
    seeds = np.arange(len(joint_densities))
    ax.bar(seeds, joint_densities, color="tab:red", alpha=0.7, label="joint search")
    ax.axhline(optimum_density, color="tab:blue", lw=2, ls="--",
               label="base-oracle optimum")
    ax.axhline(nar_density, color="tab:green", lw=2, ls=":",
               label="frozen mask (operator refinement)")
    ax.set_ylim(0, 1.05)
    ax.legend()
    _save(fig, path)


def plot_ascent_traces(traces, path):
    """Reward vs phase for a selection of exact coordinate-ascent runs."""
    fig, ax = _new_axes("Exact alternating ascent", "phase", "reward")
    for trace in traces:
        ax.plot(range(len(trace)), [s.reward for s in trace],
                marker="o", alpha=0.6, ms=3)
    _save(fig, path)


def plot_noise_profile(stats, spec, path):
    """Mean credit-assignment variance: operators vs skips, and skips by
    target-node depth."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    ax1.bar(["operators", "skips"],
            [stats.mean_op_variance(), stats.mean_skip_variance()],
            color=["tab:blue", "tab:red"], alpha=0.8)
    ax1.set_ylabel("mean assigned-reward variance")
    ax1.set_title("Credit noise by decision kind")
    ax1.grid(True, axis="y", alpha=0.3)
    if stats.depth_profile:
        nodes = [d[0] for d in stats.depth_profile]
        variances = [d[2] for d in stats.depth_profile]
        ax2.plot(nodes, variances, marker="o", color="tab:red")
        ax2.set_xlabel("target node")
        ax2.set_ylabel("mean skip-credit variance")
        ax2.set_title("Skip-credit noise vs depth")
        ax2.grid(True, alpha=0.3)
    _save(fig, path)
