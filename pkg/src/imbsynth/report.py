"""Figure rendering for the report path: every delimited output gets a PNG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import Histogram  # noqa: E402


def render_dcr(hist: Histogram, path: str | Path, title: str = "DCR distribution") -> None:
    edges = list(hist.edges)
    widths = [b - a for a, b in zip(edges[:-1], edges[1:])]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(edges[:-1], hist.counts, width=widths, align="edge",
           color="#4878d0", edgecolor="white")
    ax.set_xlabel("distance to closest synthetic record")
    ax.set_ylabel("count")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_grid(cells, path: str | Path) -> None:
    ok = [c for c in cells if c.f1 is not None]
    labels = [c.label for c in ok]
    f1s = [c.f1 for c in ok]
    errs = [c.f1_std or 0.0 for c in ok]
    fig, ax = plt.subplots(figsize=(7, 0.4 * max(len(ok), 1) + 2))
    y = range(len(ok))
    ax.barh(list(y), f1s, xerr=errs, color="#4878d0")
    ax.set_yticks(list(y))
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("mean F1 (minority)")
    ax.set_title("strategy ablation grid")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_sweep(param: str, points, path: str | Path) -> None:
    xs = [p.value for p in points]
    ys = [p.f1 for p in points]
    es = [p.f1_std for p in points]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(xs, ys, yerr=es, marker="o", color="#4878d0", capsize=3)
    ax.set_xlabel(param)
    ax.set_ylabel("mean F1 (minority)")
    ax.set_title(f"F1 vs {param}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_entropy(blocks: dict, path: str | Path) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    for ax, (key, pair) in zip(axes, (
        ("prop1", ("condition_y", "condition_yx")),
        ("prop2", ("permute_xy_first_field", "fix_y_first_field")),
        ("prop3", ("minor_only", "minor_interpolate")),
    )):
        means = blocks[key]["mean"]
        names = list(pair)
        ax.bar(names, [means[n] for n in names], color=["#bbbbbb", "#4878d0"])
        ax.set_title(key)
        ax.set_ylabel("entropy (nats)")
        ax.tick_params(axis="x", labelrotation=20, labelsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
