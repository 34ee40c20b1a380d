"""
Descriptive Statistics

Autocorrelation, edge-attribute correlation, network-aggregated series and
weekday/time-of-day profiles for a sewer panel, plus an optional summary
figure.
"""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from .dataset import CHANNELS, TimeSeriesPanel, channel_index
from .errors import DataError, LagTooLarge, ZeroVariance
from .graph import ATTRIBUTE_NAMES, PipeGraph

logger = logging.getLogger(__name__)

WEEKDAYS = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"]


def acf(series: np.ndarray, max_lag: int) -> np.ndarray:
    """
    Sample autocorrelation r_0 .. r_max_lag.

    r_k = sum_t (x_t - mean)(x_{t+k} - mean) / sum_t (x_t - mean)^2
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if max_lag < 0 or max_lag >= x.size:
        raise LagTooLarge(f"max_lag {max_lag} needs a series longer than {x.size} samples")
    centred = x - x.mean()
    denom = float(centred @ centred)
    if denom == 0.0:
        raise ZeroVariance("series is constant; autocorrelation undefined")
    result = np.empty(max_lag + 1)
    result[0] = 1.0
    for k in range(1, max_lag + 1):
        result[k] = float(centred[:-k] @ centred[k:]) / denom
    return result


def edge_corr_matrix(graph: PipeGraph) -> np.ndarray:
    """9 x 9 Pearson correlation between edge attribute columns."""
    if graph.n_edges < 2:
        raise DataError(f"edge correlation needs at least 2 edges, graph has {graph.n_edges}")
    matrix = graph.edge_attr_matrix()
    std = matrix.std(axis=0)
    if np.any(std == 0):
        name = ATTRIBUTE_NAMES[int(np.flatnonzero(std == 0)[0])]
        raise ZeroVariance(f"edge attribute {name!r} is constant across all edges")
    corr = np.corrcoef(matrix, rowvar=False)
    corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def edge_corr_frame(graph: PipeGraph) -> pd.DataFrame:
    return pd.DataFrame(edge_corr_matrix(graph), index=ATTRIBUTE_NAMES, columns=ATTRIBUTE_NAMES)


def acf_frame(panel: TimeSeriesPanel, node: str, max_lag: int) -> pd.DataFrame:
    """ACF of both channels of one node, one row per lag."""
    return pd.DataFrame({
        "lag": np.arange(max_lag + 1),
        **{channel: acf(panel.node_series(node, channel), max_lag) for channel in CHANNELS},
    })


def aggregate_series(panel: TimeSeriesPanel, channel: Union[int, str] = "flow") -> pd.Series:
    """Mean over nodes of one channel, indexed by UTC time."""
    c = channel_index(channel)
    index = pd.to_datetime(panel.timestamps, unit="s", utc=True)
    return pd.Series(panel.values[:, :, c].mean(axis=1), index=index, name=CHANNELS[c])


def daily_profile(panel: TimeSeriesPanel, channel: Union[int, str] = "flow") -> pd.DataFrame:
    """Mean aggregated value by time of day (rows) and weekday (columns)."""
    series = aggregate_series(panel, channel)
    frame = pd.DataFrame({
        "weekday": series.index.dayofweek,
        "time": series.index.strftime("%H:%M"),
        "value": series.to_numpy(),
    })
    profile = frame.pivot_table(index="time", columns="weekday", values="value", aggfunc="mean")
    profile.columns = [WEEKDAYS[d] for d in profile.columns]
    return profile


def summary_table(panel: TimeSeriesPanel) -> pd.DataFrame:
    """Per-node mean/std/min/max of both channels."""
    rows = []
    for i, node in enumerate(panel.node_order):
        for c, channel in enumerate(CHANNELS):
            values = panel.values[:, i, c]
            rows.append({"node": node, "channel": channel, "mean": values.mean(),
                         "std": values.std(), "min": values.min(), "max": values.max()})
    return pd.DataFrame(rows)


def plot_analysis(panel: TimeSeriesPanel, graph: Optional[PipeGraph], path: Union[str, Path],
                  node: Optional[str] = None, max_lag: int = 432) -> Path:
    """Write a 2 x 2 PNG: aggregate flow, weekday profile, ACF, edge correlation."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    node = node or panel.node_order[-1]
    max_lag = min(max_lag, panel.n_steps - 1)
    fig, axes = plt.subplots(2, 2, figsize=(14, 10))

    aggregate_series(panel, "flow").plot(ax=axes[0, 0], lw=0.8)
    axes[0, 0].set_title("Network mean flow (cfs)")

    profile = daily_profile(panel, "flow")
    profile.plot(ax=axes[0, 1], lw=1.0)
    axes[0, 1].set_title("Mean flow by time of day")
    axes[0, 1].legend(fontsize=7)

    lags = np.arange(max_lag + 1)
    for channel in CHANNELS:
        axes[1, 0].plot(lags, acf(panel.node_series(node, channel), max_lag), label=channel)
    axes[1, 0].set_title(f"Autocorrelation at node {node}")
    axes[1, 0].set_xlabel("lag (steps)")
    axes[1, 0].legend()

    if graph is not None and graph.n_edges >= 2:
        try:
            corr = edge_corr_matrix(graph)
            im = axes[1, 1].imshow(corr, vmin=-1, vmax=1, cmap="coolwarm")
            axes[1, 1].set_xticks(range(len(ATTRIBUTE_NAMES)))
            axes[1, 1].set_xticklabels(ATTRIBUTE_NAMES, rotation=90, fontsize=7)
            axes[1, 1].set_yticks(range(len(ATTRIBUTE_NAMES)))
            axes[1, 1].set_yticklabels(ATTRIBUTE_NAMES, fontsize=7)
            fig.colorbar(im, ax=axes[1, 1])
        except ZeroVariance as exc:
            logger.warning("skipping edge correlation panel: %s", exc)
    axes[1, 1].set_title("Edge attribute correlation")

    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
