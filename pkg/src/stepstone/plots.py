"""Static SVG charts from run CSVs: training curve, swing-duration scatter,
and the predicted reachable-region heatmap.  Headless (Agg) only."""

from __future__ import annotations

import csv
import sys
from pathlib import Path
from typing import Dict, List, Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy import stats as scipy_stats  # noqa: E402

from .reachability import ERROR_THRESHOLD  # noqa: E402

# keep text as text and element ids stable so SVGs diff cleanly across reruns
plt.rcParams["svg.fonttype"] = "none"
plt.rcParams["svg.hashsalt"] = "stepstone"

_SAVE_KW = dict(format="svg", metadata={"Date": None})


def _read_csv(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def plot_training_curve(csv_path: Union[str, Path],
                        out_svg: Union[str, Path]) -> Path:
    """Reward and eval step error against samples; one point per eval row."""
    cols = _read_csv(csv_path)
    n = len(cols.get("samples", ()))
    fig, ax = plt.subplots(figsize=(6, 4))
    if n:
        ax.plot(cols["samples"], cols["reward"], "-o", ms=3, color="tab:blue",
                label="eval reward")
        ax2 = ax.twinx()
        ax2.plot(cols["samples"], cols["step_error"], "-s", ms=3,
                 color="tab:red", label="eval step error (m)")
        ax2.set_ylabel("step error (m)", color="tab:red")
    ax.set_xlabel("control ticks")
    ax.set_ylabel("episode reward", color="tab:blue")
    ax.set_title(f"training curve ({n} evals)")
    fig.tight_layout()
    fig.savefig(out_svg, **_SAVE_KW)
    plt.close(fig)
    return Path(out_svg)


def plot_swing_durations(csv_path: Union[str, Path],
                         out_svg: Union[str, Path]) -> Path:
    """Commanded step length vs realized swing duration, with Spearman rho."""
    cols = _read_csv(csv_path)
    x = cols.get("commanded_length", np.array([]))
    y = cols.get("duration_s", np.array([]))
    fig, ax = plt.subplots(figsize=(5, 4))
    title = "swing duration vs commanded length (n=0)"
    if x.size >= 2:
        rho = float(scipy_stats.spearmanr(x, y).statistic)
        ax.plot(x, y, ".", ms=4, alpha=0.6)
        title = (f"swing duration vs commanded length "
                 f"(rho={rho:.2f}, n={x.size})")
    ax.set_xlabel("commanded step length (m)")
    ax.set_ylabel("step duration (s)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_svg, **_SAVE_KW)
    plt.close(fig)
    return Path(out_svg)


def plot_reachable_region(csv_path: Union[str, Path],
                          out_svg: Union[str, Path],
                          threshold: float = ERROR_THRESHOLD) -> Path:
    """Predicted step error over the command box, contoured at the
    reachability threshold."""
    cols = _read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(5, 4))
    if cols:
        xs = np.unique(cols["x"])
        ys = np.unique(cols["y"])
        eps = np.full((ys.size, xs.size), np.nan)
        xi = np.searchsorted(xs, cols["x"])
        yi = np.searchsorted(ys, cols["y"])
        eps[yi, xi] = cols["eps"]
        mesh = ax.pcolormesh(xs, ys, eps, shading="nearest", cmap="viridis")
        fig.colorbar(mesh, ax=ax, label="predicted error (m)")
        if np.nanmin(eps) < threshold < np.nanmax(eps):
            ax.contour(xs, ys, eps, levels=[threshold], colors="white")
    ax.set_xlabel("command x (m)")
    ax.set_ylabel("command y (m)")
    ax.set_title(f"reachable region (contour at {threshold:.2f} m)")
    fig.tight_layout()
    fig.savefig(out_svg, **_SAVE_KW)
    plt.close(fig)
    return Path(out_svg)


PLOTTERS = {
    "curve.csv": ("curve.svg", plot_training_curve),
    "swing_durations.csv": ("swing_durations.svg", plot_swing_durations),
    "reachable_region.csv": ("reachable_region.svg", plot_reachable_region),
}


def emit_plots(run_dir: Union[str, Path],
               names: Optional[List[str]] = None) -> List[Path]:
    """Render every known CSV in a run directory to SVG.

    Missing CSVs are skipped with a warning; an empty directory yields no
    SVGs and is not an error.
    """
    run_dir = Path(run_dir)
    written: List[Path] = []
    for csv_name in names or list(PLOTTERS):
        svg_name, fn = PLOTTERS[csv_name]
        src = run_dir / csv_name
        if not src.exists():
            print(f"warning: {src} missing, skipping plot", file=sys.stderr)
            continue
        written.append(fn(src, run_dir / svg_name))
    return written
