"""File-based figures for a simulation trace: SVG via matplotlib plus a gnuplot script."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# (file stem, title, y label, [(column, legend), ...])
FIGURES = [
    ("x1", "Cathode pressure", "Pa", [("x1", "x1"), ("xhat1", "estimate")]),
    ("x2", "Nitrogen partial pressure", "Pa", [("x2", "x2"), ("xhat2", "estimate")]),
    ("x3", "Compressor speed", "rad/s", [("x3", "x3"), ("xhat3", "estimate")]),
    ("x4", "Supply manifold pressure", "Pa", [("x4", "x4"), ("xhat4", "estimate")]),
    ("theta", "Stack current", "A", [("theta", "xi"), ("theta_hat", "estimate")]),
    ("fault", "Fault and reconstruction", "kg/s", [("f", "f"), ("fhat", "smoothed estimate")]),
    ("gain", "Adaptive gains", "L", [("L_y1", "L (y1 channel)"), ("L_y2", "L (y2 channel)")]),
]

PLOT_COLUMNS = ["t"] + sorted({c for _, _, _, series in FIGURES for c, _ in series})


def write_plots(tr, out_dir, trace_path=None):
    """Write one SVG per figure and ``plots.gp``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for stem, title, ylabel, series in FIGURES:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        for col, label in series:
            ax.plot(tr.t, tr[col], label=label, linewidth=1.0)
        ax.set_title(title)
        ax.set_xlabel("t [s]")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="best")
        fig.tight_layout()
        path = out / f"fig_{stem}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    gp = out / "plots.gp"
    gp.write_text(gnuplot_script(tr.columns, Path(trace_path or "trace.csv").resolve()), encoding="utf-8")
    paths.append(gp)
    return paths


def gnuplot_script(columns, trace_path):
    idx = {c: i + 1 for i, c in enumerate(columns)}
    lines = [
        "# gnuplot script; run with: gnuplot plots.gp",
        "set datafile separator ','",
        "set terminal svg size 700,350",
        "set key autotitle columnhead",
        "set grid",
        "set xlabel 't [s]'",
    ]
    for stem, title, ylabel, series in FIGURES:
        lines.append(f"set output 'gp_{stem}.svg'")
        lines.append(f"set title '{title}'")
        lines.append(f"set ylabel '{ylabel}'")
        plots = ", ".join(f"'{trace_path}' using 1:{idx[c]} with lines title '{label}'"
                          for c, label in series)
        lines.append(f"plot {plots}")
    return "\n".join(lines) + "\n"
