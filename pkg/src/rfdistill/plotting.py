"""Figures for the adversarial grid summary.

Every function takes the dict produced by ``evaluation.summarize_grid`` (or
its JSON round trip) and writes one PNG.  Undistilled is drawn black and
distilled gray.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .adversarial import GROUP_BY_ID, STEPS  # noqa: E402

COLORS = {"undistilled": "black", "distilled": "0.6", "retrained": "tab:blue",
          "feature-removed": "tab:orange"}
LINE_GROUPS = ("1a", "1c", "2a", "3a")
STEP_IDS = [s.id for s in STEPS]

plt.rcParams.update({
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
})


def detector_order(summary):
    order = ["undistilled", "distilled"]
    dets = summary["detectors"]
    return [d for d in order if d in dets] + [d for d in dets if d not in order]


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def bar_chart(summary, key, categories, path, xlabel, title=None):
    """Grouped bars of mean detection rate, one bar per detector per category."""
    dets = detector_order(summary)
    width = 0.8 / len(dets)
    x = np.arange(len(categories))
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(categories) + 2), 3))
    for i, d in enumerate(dets):
        vals = [summary[key][d].get(c, np.nan) for c in categories]
        ax.bar(x + (i - (len(dets) - 1) / 2) * width, vals, width,
               color=COLORS.get(d, None), label=d)
    ax.set_xticks(x)
    ax.set_xticklabels(categories)
    ax.set_ylim(0, 1)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("detection rate")
    if title:
        ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def _members(gid):
    return " & ".join(GROUP_BY_ID[gid].members)


def line_panels(summary, block, keys, path, titles):
    """One panel per key: detection rate over increment steps."""
    dets = detector_order(summary)
    ncols = 2
    nrows = int(np.ceil(len(keys) / ncols))
    fig, axes = plt.subplots(nrows, ncols, figsize=(8, 2.6 * nrows), squeeze=False)
    for ax, k, t in zip(axes.flat, keys, titles):
        for d in dets:
            ax.plot(STEP_IDS, summary[block][d][k]["line"], marker="o", ms=3,
                    color=COLORS.get(d, None), label=d)
        ax.set_ylim(0, 1)
        ax.set_title(t)
        ax.set_xlabel("increment step")
        ax.set_ylabel("detection rate")
    for ax in list(axes.flat)[len(keys):]:
        ax.axis("off")
    axes.flat[0].legend()
    fig.tight_layout()
    return _save(fig, path)


def box_panels(summary, block, keys, path, titles):
    """Box plots drawn from stored (min, q1, median, q3, max) statistics."""
    dets = detector_order(summary)
    ncols = 4
    nrows = int(np.ceil(len(keys) / ncols))
    fig, axes = plt.subplots(nrows, ncols, figsize=(10, 2.6 * nrows), squeeze=False)
    for ax, k, t in zip(axes.flat, keys, titles):
        stats = []
        for d in dets:
            b = summary[block][d][k]["box"]
            stats.append({"label": d, "whislo": b["min"], "q1": b["q1"], "med": b["median"],
                          "q3": b["q3"], "whishi": b["max"], "fliers": []})
        ax.bxp(stats, showfliers=False)
        ax.set_ylim(0, 1)
        ax.set_title(t, fontsize=8)
    for ax in list(axes.flat)[len(keys):]:
        ax.axis("off")
    fig.tight_layout()
    return _save(fig, path)


def render_all(summary, out_dir) -> list[Path]:
    """Write the full figure set for one grid summary; returns the paths."""
    out_dir = Path(out_dir)
    dets = detector_order(summary)
    families = summary["families"]
    groups = [g for g in GROUP_BY_ID if g in summary["by_group"][dets[0]]]
    line_groups = [g for g in LINE_GROUPS if g in summary["group_step"][dets[0]]]
    paths = [
        bar_chart(summary, "by_family", families, out_dir / "dr_by_family.png", "botnet family"),
        bar_chart(summary, "by_group", groups, out_dir / "dr_by_group.png", "altered feature group"),
        bar_chart(summary, "by_step", STEP_IDS, out_dir / "dr_by_step.png", "increment step"),
    ]
    if line_groups:
        titles = [f"{g}: {_members(g)}" for g in line_groups]
        paths.append(line_panels(summary, "group_step", line_groups,
                                 out_dir / "lines_by_group.png", titles))
        paths.append(box_panels(summary, "group_step", line_groups,
                                out_dir / "boxes_by_group.png", titles))
    paths.append(line_panels(summary, "family_step", families,
                             out_dir / "lines_by_family.png", families))
    paths.append(box_panels(summary, "family_step", families,
                            out_dir / "boxes_by_family.png", families))
    return paths


def normal_chart(rows, path):
    """F1 / precision / recall bars of the normal-traffic table's average rows."""
    avg = [r for r in rows if r["family"] == "Average"]
    metrics = ("f1", "precision", "recall")
    fig, ax = plt.subplots(figsize=(4, 3))
    width = 0.8 / max(1, len(avg))
    x = np.arange(len(metrics))
    for i, r in enumerate(avg):
        vals = [np.nan if r[m] in (None, "") else float(r[m]) for m in metrics]
        ax.bar(x + (i - (len(avg) - 1) / 2) * width, vals, width,
               color=COLORS.get(r["detector"], None), label=r["detector"])
    ax.set_xticks(x)
    ax.set_xticklabels(metrics)
    ax.set_ylim(0, 1)
    ax.legend(loc="lower right")
    return _save(fig, path)
