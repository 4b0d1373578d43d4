"""Figure emission for reports.

All figures render through the Agg backend straight to files. SVG output is
kept byte-stable (fixed hash salt, no embedded date) so regenerating a
report from the same logs produces identical artifacts.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "calico"

_COLORS = {"baseline": "#444444", "active": "#1f77b4", "calico": "#d62728",
           "equal": "#2ca02c"}


def _save(fig, out_path: str) -> None:
    if out_path.endswith(".svg"):
        fig.savefig(out_path, metadata={"Date": None})
    else:
        fig.savefig(out_path)
    plt.close(fig)


def learning_curve_figure(curves: dict, metric: str, out_path: str) -> None:
    """Mean with a +-sd band per variant against labeled-pool size.

    curves: variant -> (n_labeled list, mean list, sd list), values in
    percent for accuracy and ECE alike.
    """
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for variant, (x, mean, sd) in sorted(curves.items()):
        color = _COLORS.get(variant, None)
        ax.plot(x, mean, marker="o", markersize=3, label=variant, color=color)
        lo = [m - s for m, s in zip(mean, sd)]
        hi = [m + s for m, s in zip(mean, sd)]
        ax.fill_between(x, lo, hi, alpha=0.15, color=color)
    ax.set_xlabel("labeled samples")
    ax.set_ylabel(f"{metric} (%)")
    ax.legend(frameon=False, fontsize=8)
    ax.grid(alpha=0.25)
    fig.tight_layout()
    _save(fig, out_path)


def reliability_figure(rows: list, title: str, out_path: str) -> None:
    """Per-bin accuracy bars against the diagonal of perfect calibration."""
    fig, ax = plt.subplots(figsize=(3.6, 3.4))
    mids = [r["midpoint"] for r in rows]
    accs = [r["acc"] for r in rows]
    width = 1.0 / max(len(rows), 1)
    occupied = [r["count"] > 0 for r in rows]
    ax.bar([m for m, o in zip(mids, occupied) if o],
           [a for a, o in zip(accs, occupied) if o],
           width=width * 0.9, color="#1f77b4", alpha=0.8, label="accuracy")
    ax.plot([0, 1], [0, 1], linestyle="--", color="#888888", linewidth=1,
            label="perfect")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("confidence")
    ax.set_ylabel("accuracy")
    ax.set_title(title, fontsize=9)
    ax.legend(frameon=False, fontsize=8, loc="upper left")
    fig.tight_layout()
    _save(fig, out_path)
