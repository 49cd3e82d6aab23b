"""Figure and text rendering for sweep tables, curves and saliency grids."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .attribution import SaliencyMap  # noqa: E402
from .probes import InterventionCurve, SweepTable  # noqa: E402


def render_sweep_table(table: SweepTable) -> str:
    """Plain-text table: one row per mode, one column per concept plus 'all'."""
    lines = []
    header = ["model"] + table.columns
    rows = []
    for mode in table.cells:
        mean, std = table.mean(mode), table.std(mode)
        rows.append([mode] + [f"{m:.3f}±{s:.3f}" for m, s in zip(mean, std)])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    for row in [header] + rows:
        lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def plot_intervention_curves(curves: dict[str, InterventionCurve], path):
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, curve in curves.items():
        ms = [p[0] for p in curve.points]
        es = [p[1] for p in curve.points]
        ax.plot(ms, es, marker="o", label=label)
    ax.set_xlabel("concept groups intervened")
    ax.set_ylabel("test error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_saliency_grid(input_x: np.ndarray, maps: list[SaliencyMap],
                         aggregate: SaliencyMap | None, path):
    """Row of heat strips: input, one panel per category map, aggregate last."""
    if not maps:
        raise ValueError("empty map list")
    shapes = {m.values.shape for m in maps}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent map shapes {shapes}")
    panels = [("input", np.asarray(input_x, dtype=np.float64))]
    panels += [(f"cat {i}", m.values) for i, m in enumerate(maps)]
    if aggregate is not None:
        panels.append(("aggregate", aggregate.values))
    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 2.2))
    if n == 1:
        axes = [axes]
    for ax, (title, vals) in zip(axes, panels):
        strip = np.abs(vals).reshape(1, -1) if title != "input" else vals.reshape(1, -1)
        ax.imshow(strip, aspect="auto", cmap="viridis" if title == "input" else "magma")
        ax.set_title(title, fontsize=8)
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_summary(report_dict: dict) -> str:
    """Human-readable digest of a diagnostics report."""
    lines = [f"# Diagnostics report (toolkit {report_dict.get('version')})",
             f"lineage: {report_dict.get('lineage')}", ""]
    sweep = report_dict.get("sweep")
    if sweep:
        lines.append("## Single-concept sweep (target error, mean over seeds)")
        table = SweepTable.from_dict(sweep)
        lines.append(render_sweep_table(table))
        lines.append("")
    curves = report_dict.get("curves") or {}
    if curves:
        lines.append("## Intervention curves")
        for label, c in curves.items():
            pts = ", ".join(f"{m}:{e:.3f}" for m, e in c["points"])
            lines.append(f"- {label}: {pts}")
        lines.append("")
    alignment = report_dict.get("alignment")
    if alignment:
        lines.append("## Saliency alignment R^2 (reference first)")
        for name, p in alignment["pairs"].items():
            lines.append(
                f"- {name}: {p['mean']:.3f} ± {p['std']:.3f} (across samples; "
                f"seed std {p['seed_std']:.3f}; rank corr {p['rank_corr_mean']:.3f})")
        lines.append("")
    metrics = report_dict.get("metrics") or {}
    if metrics:
        lines.append("## Metrics")
        for key in sorted(metrics):
            lines.append(f"- {key}: {metrics[key]}")
    return "\n".join(lines) + "\n"
