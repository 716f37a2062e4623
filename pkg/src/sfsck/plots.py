"""Figures for the bench report: rendered next to the delimited output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

PASS_KEYS = ("pass1", "pass2", "pass3", "pass4", "pass5")


def runtime_figure(medians: dict, config: str, path: str) -> None:
    """Median wall time vs thread count, one line per mode."""
    fig, ax = plt.subplots(figsize=(6, 4))
    modes = sorted({m for (c, m, t) in medians if c == config and m != "serial"})
    serial = [v for (c, m, t), v in medians.items() if c == config and m == "serial"]
    if serial:
        ax.axhline(serial[0]["total"], color="gray", ls="--", lw=1,
                   label=f"serial ({serial[0]['total']:.2f}s)")
    for mode in modes:
        pts = sorted((t, v["total"]) for (c, m, t), v in medians.items()
                     if c == config and m == mode)
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=mode)
    ax.set_xlabel("threads")
    ax.set_ylabel("median wall time (s)")
    ax.set_title(f"C/R runtime: {config}")
    ax.set_ylim(bottom=0)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def breakdown_figure(medians: dict, config: str, path: str) -> None:
    """Stacked per-pass breakdown for each (mode, threads) column."""
    cols = sorted(((m, t) for (c, m, t) in medians if c == config),
                  key=lambda x: (x[0] != "serial", x[0], x[1]))
    fig, ax = plt.subplots(figsize=(max(6, len(cols) * 0.8), 4))
    xs = range(len(cols))
    bottoms = [0.0] * len(cols)
    for key in PASS_KEYS:
        vals = [medians[(config, m, t)].get(key, 0.0) for m, t in cols]
        ax.bar(xs, vals, bottom=bottoms, label=key)
        bottoms = [b + v for b, v in zip(bottoms, vals)]
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"{m}\nt={t}" for m, t in cols], fontsize=7)
    ax.set_ylabel("median wall time (s)")
    ax.set_title(f"per-pass breakdown: {config}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def memory_figure(medians: dict, config: str, path: str) -> None:
    cols = sorted(((m, t) for (c, m, t) in medians if c == config),
                  key=lambda x: (x[0] != "serial", x[0], x[1]))
    fig, ax = plt.subplots(figsize=(max(6, len(cols) * 0.8), 4))
    xs = range(len(cols))
    vals = [medians[(config, m, t)].get("peak_mem_mb", 0.0) for m, t in cols]
    ax.bar(xs, vals, color="tab:purple")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"{m}\nt={t}" for m, t in cols], fontsize=7)
    ax.set_ylabel("peak resident memory (MB)")
    ax.set_title(f"memory: {config}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
