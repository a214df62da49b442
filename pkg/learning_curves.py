"""
Learning Curves Module
Charts of aggregated learning curves: one mean line per series with a shaded
standard-error band. Static SVG through matplotlib, interactive HTML through plotly.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import plotly.graph_objects as go
import seaborn as sns

from errors import UsageError

logger = logging.getLogger(__name__)

SVG_HASH_SALT = "learning-curves"


@dataclass(frozen=True)
class PlotAxes:
    x_label: str = "states visited"
    y_label: str = "modes found (%)"
    title: str = ""


def check_shared_grid(aggregates):
    if not aggregates:
        raise UsageError("nothing to plot")
    grid = np.asarray(aggregates[0].x)
    for series in aggregates[1:]:
        if len(series.x) != len(grid) or not np.array_equal(series.x, grid):
            raise UsageError(f"series {series.label} does not share the x grid of {aggregates[0].label}")
    return grid


def _resolve_labels(aggregates, labels):
    labels = list(labels) if labels else [series.label for series in aggregates]
    if len(labels) != len(aggregates):
        raise UsageError(f"{len(labels)} labels for {len(aggregates)} series")
    return labels


def create_learning_curve_figure(aggregates, labels=None, axes=PlotAxes()):
    """Matplotlib figure, mean +/- standard error per series"""
    grid = check_shared_grid(aggregates)
    labels = _resolve_labels(aggregates, labels)
    palette = sns.color_palette("deep", len(aggregates))

    with sns.axes_style("whitegrid"):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for series, label, color in zip(aggregates, labels, palette):
            mean = np.asarray(series.mean, dtype=np.float64)
            stderr = np.nan_to_num(np.asarray(series.stderr, dtype=np.float64))
            ax.plot(grid, mean, label=label, color=color, linewidth=1.8)
            ax.fill_between(grid, mean - stderr, mean + stderr, color=color, alpha=0.2, linewidth=0)

        ax.set_xlabel(axes.x_label)
        ax.set_ylabel(axes.y_label)
        if axes.title:
            ax.set_title(axes.title)
        ax.legend(loc="best", frameon=True)
        fig.tight_layout()
    return fig


def create_interactive_figure(aggregates, labels=None, axes=PlotAxes()):
    grid = check_shared_grid(aggregates)
    labels = _resolve_labels(aggregates, labels)
    palette = sns.color_palette("deep", len(aggregates)).as_hex()

    fig = go.Figure()
    for series, label, color in zip(aggregates, labels, palette):
        mean = np.asarray(series.mean, dtype=np.float64)
        stderr = np.nan_to_num(np.asarray(series.stderr, dtype=np.float64))
        # Band as a closed polygon: upper edge forward, lower edge backward
        fig.add_trace(go.Scatter(
            x=np.concatenate([grid, grid[::-1]]),
            y=np.concatenate([mean + stderr, (mean - stderr)[::-1]]),
            fill='toself',
            fillcolor=color,
            opacity=0.2,
            line=dict(width=0),
            hoverinfo='skip',
            showlegend=False,
        ))
        fig.add_trace(go.Scatter(x=grid, y=mean, mode='lines', name=label, line=dict(color=color, width=2)))

    fig.update_layout(
        title=axes.title or None,
        xaxis_title=axes.x_label,
        yaxis_title=axes.y_label,
        template='plotly_white',
    )
    return fig


def emit_plot(aggregates, labels, axes, path):
    """Write an .svg (byte-stable for identical inputs) or an interactive .html chart"""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in (".svg", ".html"):
        raise UsageError(f"plot target must end in .svg or .html, got {path.name}")
    path.parent.mkdir(parents=True, exist_ok=True)

    if suffix == ".html":
        create_interactive_figure(aggregates, labels, axes).write_html(str(path), include_plotlyjs="cdn")
    else:
        with plt.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
            fig = create_learning_curve_figure(aggregates, labels, axes)
            fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)

    logger.info("✅ Plot saved to %s", path)
    return path
