"""Figure output: byte-stable SVG renderings and standalone plot scripts."""

import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

# fixed salt keeps the generated SVG element ids identical between runs
plt.rcParams["svg.hashsalt"] = "stochstab"

Curve = tuple[str, np.ndarray, np.ndarray]

_PLOT_SCRIPT = '''"""Render "{title}" from the CSV files next to this script."""

import pathlib

import matplotlib.pyplot as plt
import pandas as pd

HERE = pathlib.Path(__file__).resolve().parent
FILES = {files!r}

fig, ax = plt.subplots(figsize=(7, 4.5))
for name in FILES:
    frame = pd.read_csv(HERE / name)
    ax.plot(frame[{x!r}], frame[{y!r}], label=name[:-4])
if {logy!r}:
    ax.set_yscale("log")
ax.set_xlabel({x!r})
ax.set_ylabel({ylabel!r})
ax.set_title({title!r})
ax.legend(fontsize="small")
fig.tight_layout()
fig.savefig(HERE / {output!r})
print("wrote", HERE / {output!r})
'''


def plot_curves_svg(
    path: Path,
    title: str,
    curves: Sequence[Curve],
    xlabel: str,
    ylabel: str,
    logy: bool = False,
) -> Path:
    """Line chart of (label, x, y) curves written as SVG without a date stamp."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    try:
        for label, x, y in curves:
            y = np.asarray(y, dtype=float)
            if logy:
                # zeros cannot be drawn on a log axis
                y = np.where(y > 0.0, y, np.nan)
            ax.plot(x, y, label=label, linewidth=1.0)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if len(curves) > 1:
            ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    logger.info(f"Wrote figure {path.name} | curves={len(curves)}")
    return path


def write_plot_script(
    path: Path,
    title: str,
    csv_files: Sequence[str],
    x: str,
    y: str,
    ylabel: str,
    logy: bool = False,
) -> Path:
    """Python script that redraws a figure from the CSV files in its own directory."""
    script = _PLOT_SCRIPT.format(
        title=title,
        files=list(csv_files),
        x=x,
        y=y,
        ylabel=ylabel,
        logy=logy,
        output=path.stem.removeprefix("plot_") + ".png",
    )
    path.write_text(script, encoding="utf-8")
    return path
