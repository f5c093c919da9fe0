"""Report figures. Rendered headless to files next to the tabular output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .prompt_builder import KINDS  # noqa: E402

_TITLES = ("Conversation", "Detailed\ndescription", "Complex\nreasoning", "All")


def _style(ax):
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.tick_params(labelsize=9)


def plot_relative_scores(rows, path, title: str = "Relative score") -> Path:
    """Grouped bars, one group per kind plus "All", one bar per candidate row.

    ``rows`` is a list of (name, per-kind scores, overall) tuples.
    """
    fig, ax = plt.subplots(figsize=(7, 3.6))
    n = max(len(rows), 1)
    width = 0.8 / n
    for j, (name, per_kind, overall) in enumerate(rows):
        values = [per_kind.get(k, 0.0) for k in KINDS] + [overall or 0.0]
        xs = [i + (j - (n - 1) / 2) * width for i in range(len(values))]
        bars = ax.bar(xs, values, width=width * 0.95, label=name or f"candidate {j + 1}")
        ax.bar_label(bars, fmt="%.1f", fontsize=7, padding=1)
    ax.set_xticks(range(len(_TITLES)), _TITLES)
    ax.set_ylabel("relative score (%)")
    ax.axhline(100.0, color="0.6", lw=0.8, ls="--")
    ax.set_title(title, fontsize=10)
    ax.set_ylim(0, max([100.0] + [v for _, pk, o in rows for v in [*pk.values(), o or 0.0]]) * 1.18)
    _style(ax)
    if len(rows) > 1:
        ax.legend(fontsize=8, frameon=False, loc="upper center", ncol=min(len(rows), 4))
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_kind_split(report: dict, path) -> Path:
    """Achieved per-kind share next to the reference split."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    xs = range(len(KINDS))
    ours = [report["share"][k] * 100 for k in KINDS]
    ref = [report["target_split"]["share"][k] * 100 for k in KINDS]
    ax.bar([x - 0.2 for x in xs], ours, width=0.4, label=f"dataset (n={report['total']})")
    ax.bar([x + 0.2 for x in xs], ref, width=0.4, label=f"target (n={report['target_split']['total']})")
    ax.set_xticks(list(xs), _TITLES[:3])
    ax.set_ylabel("share of samples (%)")
    _style(ax)
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
