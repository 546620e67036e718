"""Figure rendering for suite results and pulse schedules.

Figures are written next to the delimited output: the bench subcommand saves
compile-time and accuracy plots alongside its CSV, and inspect can render a
per-variable schedule view.  Matplotlib is imported lazily with the Agg
backend so headless runs never touch a display.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def save_suite_figures(rows: Sequence, out_prefix: str) -> list[str]:
    """Compile-time and relative-error plots per model; returns written paths."""
    plt = _pyplot()
    by_model: dict[str, list] = {}
    for row in rows:
        if row.status == "ok":
            by_model.setdefault(row.model, []).append(row)
    written: list[str] = []
    if not by_model:
        return written

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for model, group in sorted(by_model.items()):
        group = sorted(group, key=lambda r: r.n)
        ax.plot([r.n for r in group], [r.compile_seconds for r in group], "o-", label=model)
    ax.set_xlabel("sites")
    ax.set_ylabel("compile time (s)")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = f"{out_prefix}_compile_time.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for model, group in sorted(by_model.items()):
        group = sorted(group, key=lambda r: r.n)
        errs = [r.relative_error_pct if math.isfinite(r.relative_error_pct) else 0.0 for r in group]
        ax.plot([r.n for r in group], errs, "s-", label=model)
    ax.set_xlabel("sites")
    ax.set_ylabel("relative error (%)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = f"{out_prefix}_relative_error.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)
    return written


def save_schedule_figure(schedule_data: Mapping, path: str) -> str:
    """Step plot of every dynamic value across segments, fixed values listed."""
    plt = _pyplot()
    segments = schedule_data.get("segments", [])
    names = sorted({k for seg in segments for k in seg.get("dynamic", {})})
    edges = [0.0]
    for seg in segments:
        edges.append(edges[-1] + float(seg["t_machine_us"]))

    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    for name in names:
        xs: list[float] = []
        ys: list[float] = []
        for i, seg in enumerate(segments):
            xs += [edges[i], edges[i + 1]]
            val = float(seg["dynamic"].get(name, 0.0))
            ys += [val, val]
        ax.plot(xs, ys, label=name, drawstyle="steps-post")
    ax.set_xlabel("machine time (us)")
    ax.set_ylabel("value")
    fixed = schedule_data.get("fixed", {})
    if fixed:
        note = ", ".join(f"{k}={float(v):.3g}" for k, v in sorted(fixed.items()))
        ax.set_title(f"fixed: {note}", fontsize=8)
    if names:
        ax.legend(fontsize=7, ncol=2)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
