"""
QRobust Reporting
CSV result tables and optional figures for training, attack and bound analyses.
"""

from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from qr_errors import FileOperationError  # noqa: E402
from qr_files import atomic_write, ensure_directory  # noqa: E402
from qr_logging import get_logger  # noqa: E402

logger = get_logger(__name__)

PathLike = Union[str, Path]


def write_table(path: PathLike, frame: pd.DataFrame) -> Path:
    """Atomically write a DataFrame as CSV without the index."""
    return atomic_write(path, lambda temp: frame.to_csv(temp, index=False, float_format="%.10g"))


def read_table(path: PathLike) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FileOperationError(f"Cannot read table {path}: {e}", file_path=str(path), operation="read")


def _save(fig, path: PathLike) -> Path:
    path = Path(path)
    ensure_directory(path.parent)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.debug(f"Figure written to {path}")
    return path


def plot_history(history: pd.DataFrame, path: PathLike, title: str = "Training") -> Path:
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(history["epoch"], history["loss"], label="train")
    ax_loss.plot(history["epoch"], history["test_loss"], label="test")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy")
    ax_loss.legend()
    ax_acc.plot(history["epoch"], history["train_accuracy"], label="train")
    ax_acc.plot(history["epoch"], history["test_accuracy"], label="test")
    if "adversarial_accuracy" in history and history["adversarial_accuracy"].notna().any():
        ax_acc.plot(history["epoch"], history["adversarial_accuracy"], label="adversarial")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.legend()
    fig.suptitle(title)
    return _save(fig, path)


def plot_attack(accuracy: pd.DataFrame, samples: pd.DataFrame, path: PathLike, max_curves: int = 20) -> Path:
    fig, (ax_p, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    for sample_id in samples["sample_id"].unique()[:max_curves]:
        rows = samples[samples["sample_id"] == sample_id]
        ax_p.plot(rows["eps_hat"], rows["p_correct"], alpha=0.5, linewidth=0.8)
    ax_p.axhline(0.5, color="k", linestyle="--", linewidth=0.8)
    ax_p.set_xlabel("normalised perturbation ε̂")
    ax_p.set_ylabel("correct-class probability")
    ax_acc.plot(accuracy["eps_hat"], accuracy["accuracy"], marker="o", markersize=3)
    ax_acc.set_xlabel("normalised perturbation ε̂")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    return _save(fig, path)


def plot_g_curve(curve: pd.DataFrame, path: PathLike, marks: Sequence[float] = (0.15, 0.25)) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(curve["r"], curve["g_ratio"])
    for r in marks:
        ax.axvline(r, color="grey", linestyle=":", linewidth=0.8)
    ax.set_xlabel("mask fraction r")
    ax.set_ylabel("G_r / G")
    ax.set_ylim(0.0, 1.02)
    return _save(fig, path)


def plot_bounds(bounds: pd.DataFrame, path: PathLike) -> Path:
    ok = bounds[bounds["status"] == "ok"].sort_values("r_lb")
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(len(ok))
    ax.plot(x, ok["r_lb"], label="R_LB", marker=".", linestyle="none")
    ax.plot(x, ok["r_ub"], label="R_UB", marker=".", linestyle="none")
    ax.set_xlabel("sample (sorted by R_LB)")
    ax.set_ylabel("infidelity")
    ax.legend()
    return _save(fig, path)


def plot_gradient_maps(maps: Dict[int, np.ndarray], path: PathLike, names: Optional[Dict[int, str]] = None) -> Path:
    fig, axes = plt.subplots(1, len(maps), figsize=(3.2 * len(maps), 3))
    axes = np.atleast_1d(axes)
    for ax, (label, grid) in zip(axes, sorted(maps.items())):
        limit = float(np.max(np.abs(grid))) or 1.0
        image = ax.imshow(grid, cmap="RdBu_r", vmin=-limit, vmax=limit)
        ax.set_title((names or {}).get(label, f"class {label}"))
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(image, ax=ax, fraction=0.046)
    return _save(fig, path)


def comparison_table(current: pd.DataFrame, baseline: pd.DataFrame, key: str, columns: Iterable[str]) -> pd.DataFrame:
    """Join two tables on ``key`` and add ``<col>_baseline`` and ``<col>_change`` columns."""
    merged = current.merge(baseline, on=key, how="left", suffixes=("", "_baseline"))
    for column in columns:
        if f"{column}_baseline" in merged:
            merged[f"{column}_change"] = merged[column] - merged[f"{column}_baseline"]
    return merged
