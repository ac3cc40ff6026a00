"""Figure rendering for sweep reports.

Uses matplotlib's object API directly (no pyplot, no backend switch);
every function writes one PNG and returns its path. Inputs are the
episode views and report rows produced by the harness, so the figures
always agree with the delimited files next to them.
"""

from matplotlib.figure import Figure

from .harness import group_views

_DPI = 120


def _cell_label(cell) -> str:
    if cell.kind == "none":
        return "nominal"
    label = f"{cell.kind} p{int(cell.spatial)}"
    if cell.kind == "las":
        label += f"q{int(cell.temporal)}"
    label += f"\nB={cell.budget:g}"
    if cell.kind == "las":
        label += f" H={cell.horizon}"
    return label


def reward_boxplot(views, path):
    """One reward box per grid cell, in sweep order."""
    pairs = group_views(views)
    data = [[v.cum_reward for v in cell_views] for _, cell_views in pairs]
    labels = [_cell_label(cell) for cell, _ in pairs]
    fig = Figure(figsize=(max(6.0, 0.9 * len(pairs)), 4.5))
    ax = fig.subplots()
    ax.boxplot(data, tick_labels=labels)
    ax.set_ylabel("cumulative reward")
    ax.set_title("reward distribution per attack cell")
    ax.tick_params(axis="x", labelsize=7)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, format="png")
    return path


def dimension_bars(dim_rows, path):
    """Stacked per-dimension attack mass, one bar per attacked episode."""
    rows = [r for r in dim_rows if r["total"] > 0.0]
    if not rows:
        rows = dim_rows
    dim_cols = [k for k in rows[0] if k.startswith("d") and k[1:].isdigit()]
    dim_cols.sort(key=lambda k: int(k[1:]))
    xs = list(range(len(rows)))
    fig = Figure(figsize=(max(6.0, 0.08 * len(rows)), 4.0))
    ax = fig.subplots()
    bottom = [0.0] * len(rows)
    for col in dim_cols:
        heights = [r[col] for r in rows]
        ax.bar(xs, heights, bottom=bottom, width=0.9, label=f"action dim {col[1:]}")
        bottom = [b + h for b, h in zip(bottom, heights)]
    ax.set_xlabel("episode")
    ax.set_ylabel("applied |delta| mass")
    ax.set_title("per-dimension attack decomposition")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, format="png")
    return path


def delta_traces(trace_rows, path):
    """Per-step perturbation norms, one panel per temporal norm."""
    rows = [r for r in trace_rows if r["kind"] == "las"]
    if not rows:
        rows = [r for r in trace_rows if r["kind"] != "none"] or list(trace_rows)
    qs = sorted({r["q"] for r in rows})
    fig = Figure(figsize=(7.0, 2.8 * max(1, len(qs))))
    axes = fig.subplots(len(qs), 1, squeeze=False)[:, 0]
    for ax, q in zip(axes, qs):
        per_episode = {}
        for r in rows:
            if r["q"] == q:
                per_episode.setdefault(r["episode"], []).append((r["t"], r["delta_norm"]))
        for ep, pts in sorted(per_episode.items()):
            pts.sort()
            ax.plot([t for t, _ in pts], [dn for _, dn in pts], alpha=0.5, linewidth=0.9)
        ax.set_ylabel("||delta'||")
        ax.set_title(f"temporal norm q={q}")
        ax.grid(True, alpha=0.3)
    axes[-1].set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, format="png")
    return path


def ablation_lines(las_vs_mas_rows, path):
    """LAS minus MAS mean reward against window budget, one line per (H, p, q)."""
    groups = {}
    for r in las_vs_mas_rows:
        groups.setdefault((r["H"], r["p"], r["q"]), []).append((r["B"], r["difference"]))
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.subplots()
    for (h, p, q), pts in sorted(groups.items()):
        pts.sort()
        ax.plot([b for b, _ in pts], [d for _, d in pts], marker="o",
                label=f"H={h} p{p}q{q}")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("window budget B")
    ax.set_ylabel("mean(LAS) - mean(MAS)")
    ax.set_title("look-ahead advantage by budget")
    if groups:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, format="png")
    return path
