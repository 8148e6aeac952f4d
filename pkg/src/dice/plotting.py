"""Report figures: a 2-D projection scatter with per-cluster outcome ratios,
and validation AUC against latent size for every K of a grid search.

Figures are written as SVG with a fixed hash salt and no date stamp so the
files are byte-identical across reruns.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "dice",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.titlesize": 10,
    "legend.frameon": False,
}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _palette(n):
    cmap = plt.get_cmap("tab10")
    return [cmap(i % 10) for i in range(n)]


def projection_figure(coords, labels, ratios, path, explained=None, title="Test subjects") -> None:
    """Scatter of projected subjects colored by cluster beside a bar chart of
    each cluster's outcome ratio."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    K = len(ratios)
    colors = _palette(K)
    with plt.rc_context(STYLE):
        fig, (ax, bx) = plt.subplots(1, 2, figsize=(8.0, 3.6), gridspec_kw={"width_ratios": [2, 1]})
        for k in range(K):
            m = labels == k
            if m.any():
                ax.scatter(coords[m, 0], coords[m, 1], s=9, color=colors[k], alpha=0.75, linewidths=0, label=f"cluster {k}")
        if explained is not None:
            ax.set_xlabel(f"PC1 ({100 * explained[0]:.1f}%)")
            ax.set_ylabel(f"PC2 ({100 * explained[1]:.1f}%)")
        else:
            ax.set_xlabel("PC1")
            ax.set_ylabel("PC2")
        ax.set_title(title)
        ax.legend(loc="best", fontsize=7, markerscale=1.5)

        heights = [0.0 if r is None else r for r in ratios]
        bx.bar(range(K), heights, color=colors)
        for k, r in enumerate(ratios):
            bx.text(k, heights[k] + 0.02, "n/a" if r is None else f"{r:.2f}", ha="center", fontsize=7)
        bx.set_xticks(range(K))
        bx.set_xticklabels([str(k) for k in range(K)])
        bx.set_ylim(0.0, 1.1)
        bx.set_xlabel("cluster")
        bx.set_ylabel("outcome ratio")
        fig.tight_layout()
        _save(fig, path)


def candidates_figure(rows, path) -> None:
    """Validation AUC against d, one line per K; ineligible points drawn translucent."""
    ks = sorted({int(r["K"]) for r in rows})
    colors = _palette(len(ks))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for color, K in zip(colors, ks):
            sub = sorted((r for r in rows if int(r["K"]) == K), key=lambda r: int(r["d"]))
            ds = [int(r["d"]) for r in sub]
            auc = [np.nan if r["auc_val"] in ("", None) else float(r["auc_val"]) for r in sub]
            ax.plot(ds, auc, color=color, linewidth=1.0, label=f"K={K}")
            for dd, a, r in zip(ds, auc, sub):
                ok = r["eligible"] == "yes"
                ax.scatter([dd], [a], color=color, alpha=1.0 if ok else 0.3, s=30 if r["selected"] == "yes" else 14,
                           edgecolors="black" if r["selected"] == "yes" else "none", zorder=3)
        ax.set_xlabel("latent dimension d")
        ax.set_ylabel("validation AUC")
        ax.legend(loc="best", fontsize=7)
        fig.tight_layout()
        _save(fig, path)
