"""Optional PNG plots of run artifacts (requires matplotlib)."""

from __future__ import annotations

import csv
from pathlib import Path


def _columns(path: Path) -> dict[str, list[float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[float]] = {k: [] for k in reader.fieldnames or []}
        for row in reader:
            for k, v in row.items():
                cols[k].append(float(v))
    return cols


def plot_run(out_dir: Path) -> list[Path]:
    """Entropy/mass change and the final snapshot of the run in ``out_dir``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    series = _columns(out_dir / "series.csv")
    t = series["t"]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, key in zip(axes, ("entropy", "mass")):
        ref = series[key][0]
        ax.plot(t, [v - ref for v in series[key]])
        ax.set_xlabel("t")
        ax.set_ylabel(f"{key}(t) - {key}(0)")
    fig.tight_layout()
    path = out_dir / "history.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    snap = _columns(out_dir / "snapshot.csv")
    if "x" in snap:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(snap["x"], snap["q"], lw=1)
        ax.set_xlabel("x")
        ax.set_ylabel("q")
        fig.tight_layout()
        path = out_dir / "snapshot.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
