"""Sweep report writers: delimited rows, JSON summary, and figures.

All writers are deterministic for a given report: fixed column order,
LF line endings, sorted JSON keys, and figure rendering pinned to the
Agg backend so reruns produce byte-identical artifacts.
"""

from __future__ import annotations

import csv
import json
import math
import os

from .evaluate import ROW_COLUMNS, EvalReport

# One line style per solver mode so every figure reads the same way.
_MODE_STYLE = {
    "hierarchical": {"color": "#1f77b4", "marker": "o"},
    "flat": {"color": "#d62728", "marker": "s"},
    "forward_only": {"color": "#7f7f7f", "marker": "^"},
    "no_hierarchy": {"color": "#2ca02c", "marker": "d"},
}


def write_report_csv(report: EvalReport, path) -> None:
    """One row per case-condition, ROW_COLUMNS order, UTF-8, LF endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_COLUMNS)
        for r in report.rows:
            w.writerow([_cell(r[c]) for c in ROW_COLUMNS])


def _cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.9g}"
    return v


def write_report_json(report: EvalReport, path) -> None:
    """The recomputed summary (tables, curves, config echo) as strict JSON."""
    doc = _strict(report.summary())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _strict(v):
    """NaN/inf are not valid JSON scalars; map them to None."""
    if isinstance(v, float):
        return v if math.isfinite(v) else None
    if isinstance(v, dict):
        return {k: _strict(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_strict(x) for x in v]
    return v


def render_report_figures(report: EvalReport, out_dir) -> list[str]:
    """DoC curves per pattern plus the standard-vs-occluded bar chart.

    Returns the written paths. Rendering is import-local and forces the
    Agg backend so the writers work headless and reruns byte-match.
    """
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    written = []
    for pattern in report.patterns:
        fig, ax = plt.subplots(figsize=(5.0, 3.4), dpi=120)
        for mode in report.modes:
            curve = report.doc_curve(mode, pattern)
            if not curve:
                continue
            xs = [d for d, _ in curve]
            ys = [v for _, v in curve]
            ax.semilogy(xs, ys, label=mode, **_MODE_STYLE.get(mode, {}))
        ax.set_xlabel("degree of occlusion (0 = unoccluded)")
        ax.set_ylabel("median MPJPE (model units)")
        ax.set_title(f"{pattern} occluders")
        ax.set_xticks([0, *report.docs])
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(out_dir, f"doc_curve_{pattern}.png")
        fig.savefig(path)
        plt.close(fig)
        written.append(path)

    summary = report.summary()["standard_vs_occluded"]
    fig, ax = plt.subplots(figsize=(5.0, 3.4), dpi=120)
    modes = list(report.modes)
    base = [summary[m]["baseline_median"] for m in modes]
    occl = [summary[m]["occluded_median"] for m in modes]
    xs = range(len(modes))
    ax.bar([x - 0.2 for x in xs], base, width=0.4, label="standard", color="#1f77b4")
    ax.bar([x + 0.2 for x in xs], occl, width=0.4, label="occluded", color="#d62728")
    ax.set_yscale("log")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(modes, fontsize=8)
    ax.set_ylabel("median MPJPE (model units)")
    ax.set_title("standard vs occluded")
    ax.grid(True, axis="y", which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, "standard_vs_occluded.png")
    fig.savefig(path)
    plt.close(fig)
    written.append(path)
    return written
