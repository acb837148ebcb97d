"""SVG figures written next to the CSV tables.

Output is deterministic: a fixed SVG hash salt and no embedded date, so a
rerun with identical data reproduces the files byte for byte.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "axes": dict(labelsize=9, titlesize=9, linewidth=0.6, spines_top=False),
    "figure": dict(figsize=[5.0, 3.2], facecolor="white"),
    "font": dict(size=8, family="sans-serif"),
    "legend": dict(fontsize=7, frameon=False),
    "lines": dict(linewidth=1.2, markersize=4),
    "svg": dict(hashsalt="cplm", fonttype="none"),
}


def _apply_style():
    for group, values in STYLE.items():
        for key, value in values.items():
            name = f"{group}.{key.replace('_', '.')}"
            if name in matplotlib.rcParams:
                matplotlib.rcParams[name] = value


def new_figure(nrows=1, ncols=1, **kw):
    _apply_style()
    return plt.subplots(nrows=nrows, ncols=ncols, **kw)


def save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_capacity_curves(curves: dict[str, list[tuple[int, float]]], path) -> None:
    """Working-memory capacity per epoch, one line per variant."""
    fig, ax = new_figure()
    for label, points in curves.items():
        ax.plot([t for t, _ in points], [w for _, w in points], marker="o", label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("working memory capacity  w = 1 - m")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    save(fig, path)


def plot_accuracy_trajectory(series: dict[str, dict[str, list[tuple[int, float]]]], path) -> None:
    """Accuracy against epoch; one panel per category, one line per variant."""
    categories = sorted({c for per_variant in series.values() for c in per_variant})
    ncols = min(3, max(1, len(categories)))
    nrows = -(-len(categories) // ncols) or 1
    fig, axes = new_figure(nrows, ncols, figsize=[3.0 * ncols, 2.4 * nrows], squeeze=False)
    for ax, cat in zip(axes.flat, categories):
        for label, per_cat in series.items():
            if cat in per_cat:
                pts = per_cat[cat]
                ax.plot([e for e, _ in pts], [100 * a for _, a in pts], marker="o", label=label)
        ax.set_title(cat)
        ax.set_xlabel("epoch")
        ax.set_ylabel("accuracy (%)")
    for ax in list(axes.flat)[len(categories):]:
        ax.axis("off")
    if categories:
        axes.flat[0].legend()
    save(fig, path)


def plot_embedding_space(trajectory, path) -> None:
    """Projected sentence embeddings, one panel per epoch, shared axes."""
    snaps = trajectory.snapshots
    fig, axes = new_figure(1, len(snaps), figsize=[2.6 * len(snaps), 2.6], squeeze=False, sharex=True, sharey=True)
    for ax, snap in zip(axes.flat, snaps):
        for lab, color in (("good", "tab:blue"), ("bad", "tab:red")):
            pts = snap.projection[[i for i, l in enumerate(snap.labels) if l == lab]]
            if len(pts):
                ax.scatter(pts[:, 0], pts[:, 1], s=4, alpha=0.6, color=color, label=lab, linewidths=0)
        ax.set_title(f"{trajectory.label} epoch {snap.epoch}")
    axes.flat[0].legend()
    save(fig, path)


def plot_length_histogram(hist: dict[int, int], path, title: str = "") -> None:
    fig, ax = new_figure()
    ax.bar(list(hist), list(hist.values()), width=0.9, color="0.35")
    ax.set_xlabel("sentence length (words)")
    ax.set_ylabel("sentences")
    if title:
        ax.set_title(title)
    save(fig, path)
