from __future__ import annotations

from pathlib import Path
from typing import Any, Iterable, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

from uflossmri.eval.perturb import StudyCurve

METRICS = ("nrmse", "ssim", "ufloss")
METHOD_ORDER = ("zero-filled", "pics", "modl-l2", "modl-ufloss")


def _png_metadata(meta: dict[str, Any] | None) -> dict[str, str]:
    if not meta:
        return {}
    return {str(key): str(value) for key, value in meta.items()}


def save_plot(fig, out_dir: Path, name: str, meta: dict[str, Any] | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.png"
    fig.savefig(path, dpi=150, bbox_inches="tight", metadata=_png_metadata(meta))
    plt.close(fig)
    return path


def load_metrics(paths: Iterable[str | Path]) -> pd.DataFrame:
    files = [Path(path) for path in paths]
    if not files:
        raise FileNotFoundError("No metrics tables to load")
    for path in files:
        if not path.exists():
            raise FileNotFoundError(f"Missing artifact: {path}")
    df = pd.concat([pd.read_csv(path) for path in files], ignore_index=True)
    missing = {"method", *METRICS} - set(df.columns)
    if missing:
        raise ValueError(f"Metrics table lacks columns: {', '.join(sorted(missing))}")
    return df


def summarize_metrics(df: pd.DataFrame) -> pd.DataFrame:
    """Median, quartiles and IQR per method and metric (long format)."""
    long = df.melt(id_vars=["method"], value_vars=list(METRICS), var_name="metric").dropna(subset=["value"])
    grouped = long.groupby(["method", "metric"])["value"]
    summary = pd.DataFrame(
        {
            "n": grouped.size(),
            "median": grouped.median(),
            "q1": grouped.quantile(0.25),
            "q3": grouped.quantile(0.75),
        }
    ).reset_index()
    summary["iqr"] = summary["q3"] - summary["q1"]
    order = {method: index for index, method in enumerate(METHOD_ORDER)}
    summary["_order"] = summary["method"].map(order).fillna(len(order))
    return summary.sort_values(["_order", "method", "metric"]).drop(columns="_order").reset_index(drop=True)


def plot_metric_boxplots(df: pd.DataFrame, out_dir: Path, meta: dict[str, Any] | None = None) -> list[Path]:
    methods = [m for m in METHOD_ORDER if m in set(df["method"])]
    methods += sorted(set(df["method"]) - set(methods))
    paths = []
    for metric in METRICS:
        data = df.dropna(subset=[metric])
        if data.empty:
            continue
        sns.set_theme(style="whitegrid")
        fig, ax = plt.subplots(figsize=(7, 4))
        sns.boxplot(data=data, x="method", y=metric, hue="method", order=methods, ax=ax, palette="crest", legend=False)
        ax.set_xlabel("")
        ax.set_ylabel(metric.upper())
        ax.set_title(f"{metric.upper()} by method")
        paths.append(save_plot(fig, out_dir, f"report_all_{metric}", meta))
    return paths


def plot_study_curves(
    curves: Sequence[StudyCurve],
    out_dir: Path,
    name: str,
    xlabel: str,
    meta: dict[str, Any] | None = None,
) -> Path:
    sns.set_theme(style="whitegrid")
    with_nrmse = any(curve.nrmse_values for curve in curves)
    fig, axes = plt.subplots(1, 2 if with_nrmse else 1, figsize=(10 if with_nrmse else 5, 4), squeeze=False)
    for curve in curves:
        axes[0, 0].plot(curve.x_values, curve.y_values, marker="o", markersize=3, label=curve.label)
        if with_nrmse and curve.nrmse_values:
            axes[0, 1].plot(curve.x_values, curve.nrmse_values, marker="o", markersize=3, label=curve.label)
    axes[0, 0].set_ylabel("UFLoss")
    if with_nrmse:
        axes[0, 1].set_ylabel("NRMSE")
    for ax in axes[0]:
        ax.set_xlabel(xlabel)
        if any(curve.label for curve in curves):
            ax.legend()
    return save_plot(fig, out_dir, name, meta)


def render_heat_map(
    values: np.ndarray,
    out_dir: Path,
    name: str,
    title: str = "",
    meta: dict[str, Any] | None = None,
    clamp_negative: bool = True,
) -> Path:
    """Heat map of a correlation grid; negatives clamp to 0 in the image only."""
    shown = np.clip(values, 0.0, None) if clamp_negative else np.asarray(values)
    sns.set_theme(style="white")
    fig, ax = plt.subplots(figsize=(5, 4))
    sns.heatmap(shown, vmin=0.0 if clamp_negative else None, vmax=1.0, cmap="magma", ax=ax, square=True,
                xticklabels=False, yticklabels=False)
    ax.set_title(title)
    return save_plot(fig, out_dir, name, meta)


def render_images(
    images: Sequence[np.ndarray],
    titles: Sequence[str],
    out_dir: Path,
    name: str,
    meta: dict[str, Any] | None = None,
) -> Path:
    """Magnitude images side by side (retrieved patches, reconstructions)."""
    count = max(1, len(images))
    fig, axes = plt.subplots(1, count, figsize=(2.2 * count, 2.4), squeeze=False)
    for ax, image, title in zip(axes[0], images, titles):
        ax.imshow(np.abs(image), cmap="gray")
        ax.set_title(title, fontsize=8)
        ax.axis("off")
    return save_plot(fig, out_dir, name, meta)
