"""Plots rendered from CSV tables; tests check the CSV, never the pixels."""

import io
from pathlib import Path
from typing import Dict, Iterable, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from ..utils.io import PathLike, write_bytes_atomic, write_csv_atomic  # noqa: E402
from ..utils.logger import get_logger  # noqa: E402

logger = get_logger("harness.plotting")


def plot_norm_vs_eps(
    results: Union[pd.DataFrame, Iterable[Dict]], out_dir: PathLike, name: str = "norm_vs_eps"
) -> Tuple[Path, Path]:
    """Mean score-norm statistic against attack budget; writes ``<name>.csv`` and ``<name>.png``."""
    frame = results.copy() if isinstance(results, pd.DataFrame) else pd.DataFrame(list(results))
    if frame.empty:
        raise ValueError("no sweep results to plot")
    missing = {"budget", "mean_norm"} - set(frame.columns)
    if missing:
        raise ValueError(f"sweep results missing columns: {sorted(missing)}")
    frame = frame.sort_values("budget", kind="mergesort").reset_index(drop=True)

    out_dir = Path(out_dir)
    csv_path = write_csv_atomic(out_dir / f"{name}.csv", frame)

    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    try:
        if "std_norm" in frame.columns:
            ax.errorbar(frame["budget"], frame["mean_norm"], yerr=frame["std_norm"], marker="o", capsize=3)
        else:
            ax.plot(frame["budget"], frame["mean_norm"], marker="o")
        ax.set_xlabel("perturbation budget")
        ax.set_ylabel("mean score norm")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        buffer = io.BytesIO()
        fig.savefig(buffer, format="png", dpi=120)
        png_path = write_bytes_atomic(out_dir / f"{name}.png", buffer.getvalue())
    finally:
        plt.close(fig)
    logger.info("Plot written", csv=str(csv_path), png=str(png_path), points=len(frame))
    return csv_path, png_path
