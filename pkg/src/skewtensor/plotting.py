"""Static SVG summaries of simulation studies (needs matplotlib)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from .simulate import StudyRow, summarize


def study_svg(rows: Sequence[StudyRow], path: str | Path, metrics: Sequence[str] = ("rel_err_mean", "rel_err_kron")) -> None:
    """Mean and 95% percentile band of each metric against N, one panel per
    (metric, dims) pair and one line per fitted family."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise RuntimeError("SVG plots need matplotlib (pip install 'artifact[plot]')") from exc

    rows = list(rows)
    dims_list = sorted({r.dims for r in rows}, key=lambda s: [int(v) for v in s.split("x")])
    fams = list(dict.fromkeys(r.family_fit for r in rows))
    fig, axes = plt.subplots(len(metrics), len(dims_list), figsize=(4 * len(dims_list), 3.2 * len(metrics)), squeeze=False)
    for i, metric in enumerate(metrics):
        stats = summarize(rows, metric)
        for j, dims in enumerate(dims_list):
            ax = axes[i][j]
            for fam in fams:
                keys = sorted(k for k in stats if k[0] == dims and k[2] == fam)
                if not keys:
                    continue
                ns = [k[1] for k in keys]
                ax.plot(ns, [stats[k]["mean"] for k in keys], marker="o", label=fam)
                ax.fill_between(ns, [stats[k]["lo"] for k in keys], [stats[k]["hi"] for k in keys], alpha=0.15)
            ax.set_title(f"{metric}, dims {dims}")
            ax.set_xlabel("N")
    axes[0][-1].legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
