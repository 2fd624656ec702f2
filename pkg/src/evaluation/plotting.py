"""Static figures from a run's metrics.csv and open-loop predictions."""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..utils.errors import FormatError  # noqa: E402
from .evalkit import OpenLoopResult  # noqa: E402

logger = logging.getLogger(__name__)


def read_metrics(path: Path) -> List[Dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no metrics file at {path}", field="metrics.csv")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if not reader.fieldnames:
            raise FormatError(f"{path} has no header row", field="metrics.csv")
        return list(reader)


def _series(rows: List[Dict[str, str]], column: str, stage: Optional[str] = None):
    xs, ys = [], []
    for index, row in enumerate(rows):
        if stage and row.get("stage") != stage:
            continue
        value = row.get(column, "")
        if value in ("", None):
            continue
        xs.append(float(row.get("step") or index))
        ys.append(float(value))
    return np.asarray(xs), np.asarray(ys)


def _empty(ax, title: str):
    ax.set_title(title)
    ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)


def plot_returns(rows: List[Dict[str, str]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    xs, mean = _series(rows, "eval_mean_return")
    _, std = _series(rows, "eval_std_return")
    if len(xs):
        ax.plot(xs, mean, marker="o", label="target policy")
        if len(std) == len(mean):
            ax.fill_between(xs, mean - std, mean + std, alpha=0.2)
        ax.set_title("Evaluation return")
        ax.set_xlabel("update step")
        ax.set_ylabel("episode return")
        ax.legend()
    else:
        _empty(ax, "Evaluation return")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_value_gap(rows: List[Dict[str, str]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 4))
    _, true = _series(rows, "value_true")
    _, estimated = _series(rows, "value_estimated")
    if len(true) and len(estimated):
        ax.bar(["true", "estimated"], [true[-1], estimated[-1]], color=["tab:green", "tab:orange"])
        ax.set_title(f"Value estimate (gap {estimated[-1] - true[-1]:+.2f})")
    else:
        _empty(ax, "Value estimate")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_alignment(rows: List[Dict[str, str]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    xs, kl = _series(rows, "alignment_divergence")
    if len(xs):
        ax.plot(xs, kl, marker="o")
        ax.set_title("Encoder alignment KL")
        ax.set_xlabel("update step")
        ax.set_ylabel("KL per latent group")
    else:
        _empty(ax, "Encoder alignment KL")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_losses(rows: List[Dict[str, str]], path: Path) -> Path:
    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    panels = (
        ("World model", ("image_loss", "reward_loss", "kl_loss", "domain_kl_loss")),
        ("Critic", ("td_loss", "regularizer")),
        ("Actor", ("actor_loss", "imagined_return")),
    )
    for ax, (title, columns) in zip(axes, panels):
        plotted = False
        for column in columns:
            xs, ys = _series(rows, column, stage="target")
            if len(xs):
                ax.plot(xs, ys, label=column)
                plotted = True
        if plotted:
            ax.set_title(f"{title} (target)")
            ax.set_xlabel("update step")
            ax.legend()
        else:
            _empty(ax, title)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_run(run_dir: Path, out_dir: Optional[Path] = None) -> List[Path]:
    """Render every figure for ``run_dir``; returns the written PNG paths."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = read_metrics(run_dir / "metrics.csv")
    written = [
        plot_returns(rows, out_dir / "returns.png"),
        plot_value_gap(rows, out_dir / "value_gap.png"),
        plot_alignment(rows, out_dir / "alignment.png"),
        plot_losses(rows, out_dir / "losses.png"),
    ]
    logger.info("Wrote %d figures to %s", len(written), out_dir)
    return written


def plot_frame_strip(result: OpenLoopResult, path: Path, max_frames: int = 15) -> Path:
    """Ground truth (top) over open-loop prediction (bottom)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = min(len(result.predicted), max_frames)
    if count == 0:
        raise FormatError("open-loop result holds no predicted frames", field="horizon")

    index = np.linspace(0, len(result.predicted) - 1, count).round().astype(int)
    fig, axes = plt.subplots(2, count, figsize=(1.2 * count, 2.6), squeeze=False)
    for column, i in enumerate(index):
        for row, frames in enumerate((result.truth, result.predicted)):
            ax = axes[row][column]
            ax.imshow(frames[i])
            ax.set_xticks([])
            ax.set_yticks([])
        axes[1][column].set_xlabel(f"+{i + 1}", fontsize=7)
    axes[0][0].set_ylabel("truth", fontsize=8)
    axes[1][0].set_ylabel("model", fontsize=8)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
