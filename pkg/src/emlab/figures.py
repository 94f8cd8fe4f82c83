"""Render experiment plot data to PNG files via the Agg backend."""

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (5.0, 3.4)
DPI = 120


def render(report, out_dir):
    """One figure per PlotData entry; returns the written paths."""
    if not report.plots:
        return []
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for plot in report.plots:
        cols = list(plot.columns)
        x = plot.columns[cols[0]]
        fig, ax = plt.subplots(figsize=FIGSIZE)
        for name in cols[1:]:
            y = plot.columns[name]
            if plot.kind == "scatter":
                ax.plot(x, y, "o", ms=4, label=name)
            else:
                ax.plot(x, y, "-o", ms=3, label=name)
        if plot.logx:
            ax.set_xscale("log")
        if plot.logy:
            ax.set_yscale("log")
        ax.set_xlabel(plot.xlabel or cols[0])
        ax.set_ylabel(plot.ylabel)
        ax.set_title(plot.name.replace("_", " "))
        if len(cols) > 2:
            ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{plot.name}.png")
        fig.savefig(path, dpi=DPI)
        plt.close(fig)
        written.append(path)
    return written
