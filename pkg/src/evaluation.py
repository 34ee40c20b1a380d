"""
Forecast Evaluation

Scores forecasts in physical units (MAE, RMSE, MAPE), provides the
persistence and seasonal-naive reference baselines, and flags anomalies as
sustained runs of large standardized forecast residuals.
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .checkpoint import Checkpoint
from .config import EvalConfig
from .dataset import CHANNELS, TimeSeriesPanel, WindowSet
from .errors import (
    AllExcluded,
    ConfigError,
    EmptyInput,
    InsufficientHistory,
    ShapeMismatch,
    ZeroResidualVariance,
)
from .graph import PipeGraph

logger = logging.getLogger(__name__)

EVENT_COLUMNS = ["node", "channel", "start", "end", "peak_z"]


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _errors(pred, target) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and target {target.shape} differ")
    if pred.size == 0:
        raise EmptyInput("no points to score")
    return pred - target


def mae(pred, target) -> float:
    return float(np.mean(np.abs(_errors(pred, target))))


def rmse(pred, target) -> float:
    e = _errors(pred, target)
    return float(np.sqrt(np.mean(e * e)))


def mape(pred, target, epsilon: float = 1e-3, return_excluded: bool = False):
    """
    Mean of |e| / |target| over points with |target| > epsilon.

    With ``return_excluded`` the number of skipped points is returned too.
    """
    e = _errors(pred, target)
    target = np.asarray(target, dtype=np.float64)
    keep = np.abs(target) > epsilon
    excluded = int(keep.size - np.count_nonzero(keep))
    if not keep.any():
        raise AllExcluded(f"all {keep.size} targets are within {epsilon} of zero")
    value = float(np.mean(np.abs(e[keep]) / np.abs(target[keep])))
    return (value, excluded) if return_excluded else value


@dataclass
class ChannelMetrics:
    mae: float
    rmse: float
    mape: float
    mape_excluded: int
    n_points: int


@dataclass(eq=False)
class MetricReport:
    """
    Per-channel metrics, optionally broken down by horizon step.

    ``per_horizon`` has columns step, channel, mae, rmse, mape.
    """

    channels: Dict[str, ChannelMetrics]
    per_horizon: Optional[pd.DataFrame] = None
    label: str = "model"

    def to_frame(self) -> pd.DataFrame:
        rows = [{"model": self.label, "channel": c, **asdict(m)} for c, m in self.channels.items()]
        return pd.DataFrame(rows)

    def to_dict(self) -> Dict:
        return {
            "label": self.label,
            "channels": {c: asdict(m) for c, m in self.channels.items()},
            "per_horizon": None if self.per_horizon is None else self.per_horizon.to_dict("records"),
        }

    def format_table(self) -> str:
        lines = [f"{'channel':<8} {'MAE':>12} {'RMSE':>12} {'MAPE':>10} {'excluded':>9}"]
        for channel, m in self.channels.items():
            lines.append(f"{channel:<8} {m.mae:>12.6f} {m.rmse:>12.6f} {m.mape:>9.2%} {m.mape_excluded:>9d}")
        return "\n".join(lines)


def _channel_metrics(pred: np.ndarray, target: np.ndarray, epsilon: float) -> ChannelMetrics:
    try:
        pct, excluded = mape(pred, target, epsilon, return_excluded=True)
    except AllExcluded:
        pct, excluded = float("nan"), int(np.size(target))
    return ChannelMetrics(mae=mae(pred, target), rmse=rmse(pred, target), mape=pct,
                          mape_excluded=excluded, n_points=int(np.size(target)))


def metric_report(pred: np.ndarray, target: np.ndarray, epsilon: float = 1e-3,
                  per_horizon: bool = True, label: str = "model") -> MetricReport:
    """
    Score (W, H, N, 2) physical-unit forecasts against targets.
    """
    _errors(pred, target)
    pred, target = np.asarray(pred), np.asarray(target)
    channels = {name: _channel_metrics(pred[..., c], target[..., c], epsilon)
                for c, name in enumerate(CHANNELS)}
    breakdown = None
    if per_horizon and pred.ndim == 4:
        rows = []
        for step in range(pred.shape[1]):
            for c, name in enumerate(CHANNELS):
                m = _channel_metrics(pred[:, step, :, c], target[:, step, :, c], epsilon)
                rows.append({"step": step + 1, "channel": name, "mae": m.mae, "rmse": m.rmse, "mape": m.mape})
        breakdown = pd.DataFrame(rows)
    return MetricReport(channels=channels, per_horizon=breakdown, label=label)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def persistence_forecast(window: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed step: (..., L, N, 2) -> (..., H, N, 2)."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim < 3 or window.shape[-3] < 1:
        raise ShapeMismatch(f"window must be (..., L, N, 2) with L >= 1, got {window.shape}")
    return np.repeat(window[..., -1:, :, :], horizon, axis=-3)


def seasonal_naive_forecast(history: Union[TimeSeriesPanel, np.ndarray], t: int, period: int,
                            horizon: int) -> np.ndarray:
    """
    Forecast steps t .. t+H-1 by copying the observation one period earlier.

    Step t+k reads t - period + (k mod period), so period 1 is persistence.
    """
    values = history.values if isinstance(history, TimeSeriesPanel) else np.asarray(history, dtype=np.float64)
    return seasonal_naive_windows(values, np.array([t]), period, horizon)[0]


def seasonal_naive_windows(values: np.ndarray, forecast_starts: Sequence[int], period: int,
                           horizon: int) -> np.ndarray:
    """Vectorised seasonal-naive forecasts, one per forecast start: (W, H, N, 2)."""
    starts = np.asarray(forecast_starts, dtype=np.int64)
    if period < 1:
        raise ConfigError(f"seasonal period must be >= 1, got {period}")
    if starts.size and (starts.min() < period or starts.max() > values.shape[0]):
        raise InsufficientHistory(
            f"seasonal naive needs {period} steps of history before step {int(starts.min())}"
        )
    index = starts[:, None] - period + (np.arange(horizon) % period)[None, :]
    return values[index]


# ---------------------------------------------------------------------------
# model evaluation
# ---------------------------------------------------------------------------

def predict_windows(checkpoint: Checkpoint, inputs: np.ndarray, graph: PipeGraph) -> np.ndarray:
    """Physical-unit forecasts for physical-unit input windows."""
    model = checkpoint.to_model(graph)
    stats = checkpoint.norm_stats
    return stats.invert(model.predict(stats.apply(inputs)))


def evaluate(checkpoint: Checkpoint, test_windows: WindowSet, graph: PipeGraph,
             epsilon: float = 1e-3) -> MetricReport:
    """
    Score a checkpoint on raw (physical-unit) test windows.

    Inputs are normalized with the checkpoint's stats and forecasts are
    inverted before scoring.
    """
    checkpoint.verify_graph(graph)
    if len(test_windows) == 0:
        raise EmptyInput("no test windows")
    pred = predict_windows(checkpoint, test_windows.inputs, graph)
    return metric_report(pred, test_windows.targets, epsilon, label="hydronet")


def rolling_forecast(checkpoint: Checkpoint, panel: TimeSeriesPanel, graph: PipeGraph,
                     step: int = 1, batch_size: int = 256) -> TimeSeriesPanel:
    """
    Forecast panel where step t is predicted ``step`` steps ahead from the
    L observations ending at t - step.

    The result covers steps L + step - 1 .. T - 1 of ``panel``.
    """
    config = checkpoint.model_config
    if not 1 <= step <= config.horizon:
        raise ConfigError(f"forecast step must be in [1, {config.horizon}], got {step}")
    panel.check_graph(graph)
    lookback = config.lookback
    first = lookback + step - 1
    if panel.n_steps <= first:
        raise InsufficientHistory(f"panel of {panel.n_steps} steps is too short for L={lookback}, step={step}")

    model = checkpoint.to_model(graph)
    stats = checkpoint.norm_stats
    normalized = stats.apply(panel.values)
    n_windows = panel.n_steps - first
    view = np.lib.stride_tricks.sliding_window_view(normalized[:n_windows + lookback - 1], lookback, axis=0)
    inputs = np.moveaxis(view, -1, 1)
    chunks = [model.predict(np.ascontiguousarray(inputs[i:i + batch_size]))[:, step - 1]
              for i in range(0, n_windows, batch_size)]
    forecast = stats.invert(np.concatenate(chunks, axis=0))
    return TimeSeriesPanel(panel.timestamps[first:].copy(), forecast, panel.node_order)


# ---------------------------------------------------------------------------
# anomaly detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnomalyEvent:
    """Run of steps ``start .. end`` (inclusive, panel step index) with |z| > k."""

    node: str
    channel: str
    start: int
    end: int
    peak_zscore: float

    def overlaps(self, start: int, end: int) -> bool:
        """Overlap with the half-open step range [start, end)."""
        return self.start < end and self.end >= start


@dataclass(eq=False)
class ResidualStats:
    mean: np.ndarray
    std: np.ndarray


def _align(observed: TimeSeriesPanel, forecast: TimeSeriesPanel) -> int:
    """Offset of ``forecast`` within ``observed``."""
    if observed.node_order != forecast.node_order:
        raise ShapeMismatch("observed and forecast panels have different node orders")
    if forecast.n_steps == 0:
        raise EmptyInput("empty forecast panel")
    offset = int(np.searchsorted(observed.timestamps, forecast.timestamps[0]))
    end = offset + forecast.n_steps
    if end > observed.n_steps or not np.array_equal(observed.timestamps[offset:end], forecast.timestamps):
        raise ShapeMismatch("forecast timestamps are not a contiguous range of the observed panel")
    return offset


def residual_stats(observed: TimeSeriesPanel, forecast: TimeSeriesPanel) -> ResidualStats:
    """Per-node, per-channel residual mean/std (use clean validation data)."""
    offset = _align(observed, forecast)
    residual = observed.values[offset:offset + forecast.n_steps] - forecast.values
    return ResidualStats(mean=residual.mean(axis=0), std=residual.std(axis=0))


def _runs(mask: np.ndarray) -> List[tuple]:
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2] - 1))


def detect_anomalies(observed: TimeSeriesPanel, forecast: TimeSeriesPanel, stats: ResidualStats,
                     k: float = 3.0, m: int = 3) -> List[AnomalyEvent]:
    """
    Flag maximal runs of at least ``m`` consecutive steps with |z| > k,

        z = (observed - forecast - mean) / std

    per node and channel.
    """
    std = np.asarray(stats.std)
    if np.any(std == 0):
        n, c = np.argwhere(std == 0)[0]
        raise ZeroResidualVariance(
            f"residual std is zero for node {observed.node_order[n]!r} channel {CHANNELS[c]!r}"
        )
    offset = _align(observed, forecast)
    residual = observed.values[offset:offset + forecast.n_steps] - forecast.values
    z = (residual - stats.mean) / std

    events = []
    for n, node in enumerate(observed.node_order):
        for c, channel in enumerate(CHANNELS):
            series = np.abs(z[:, n, c])
            for start, end in _runs(series > k):
                if end - start + 1 >= m:
                    events.append(AnomalyEvent(node, channel, int(start + offset), int(end + offset),
                                               float(series[start:end + 1].max())))
    logger.info("detected %d anomaly events (k=%g, m=%d)", len(events), k, m)
    return events


def events_frame(events: Sequence[AnomalyEvent]) -> pd.DataFrame:
    return pd.DataFrame([[e.node, e.channel, e.start, e.end, e.peak_zscore] for e in events],
                        columns=EVENT_COLUMNS)


def save_events(events: Sequence[AnomalyEvent], path: Union[str, Path]) -> None:
    events_frame(events).to_csv(path, index=False)


# ---------------------------------------------------------------------------
# evaluator
# ---------------------------------------------------------------------------

class ForecastEvaluator:
    """
    Compare HydroNet against the persistence and seasonal-naive baselines on
    the same test windows.
    """

    def __init__(self, checkpoint: Checkpoint, graph: PipeGraph, config: Optional[EvalConfig] = None):
        """
        Parameters:
        -----------
        checkpoint : Checkpoint
            Trained model (fingerprint checked against ``graph``)
        graph : PipeGraph
        config : EvalConfig, optional
            MAPE epsilon and seasonal period
        """
        checkpoint.verify_graph(graph)
        self.checkpoint = checkpoint
        self.graph = graph
        self.config = config or EvalConfig()
        self.reports: Dict[str, MetricReport] = {}

    def evaluate_model(self, test_windows: WindowSet) -> MetricReport:
        report = evaluate(self.checkpoint, test_windows, self.graph, self.config.mape_epsilon)
        self.reports["hydronet"] = report
        return report

    def evaluate_persistence(self, test_windows: WindowSet) -> MetricReport:
        pred = persistence_forecast(test_windows.inputs, test_windows.horizon)
        report = metric_report(pred, test_windows.targets, self.config.mape_epsilon, label="persistence")
        self.reports["persistence"] = report
        return report

    def evaluate_seasonal(self, panel: TimeSeriesPanel, test_windows: WindowSet,
                          offset: int) -> Optional[MetricReport]:
        """
        Seasonal naive over the full panel; ``offset`` is the test split's
        first step within ``panel``. Skipped when history is too short.
        """
        starts = offset + test_windows.starts + test_windows.lookback
        try:
            pred = seasonal_naive_windows(panel.values, starts, self.config.seasonal_period,
                                          test_windows.horizon)
        except InsufficientHistory as exc:
            logger.warning("seasonal naive baseline skipped: %s", exc)
            return None
        report = metric_report(pred, test_windows.targets, self.config.mape_epsilon, label="seasonal_naive")
        self.reports["seasonal_naive"] = report
        return report

    def run_comparison(self, panel: TimeSeriesPanel, test_windows: WindowSet, offset: int) -> pd.DataFrame:
        """Evaluate all three forecasters and print an aligned summary."""
        print("Running Forecast Evaluation...")
        print("=" * 60)
        self.evaluate_model(test_windows)
        self.evaluate_persistence(test_windows)
        self.evaluate_seasonal(panel, test_windows, offset)

        for name, report in self.reports.items():
            print(f"\n{name}")
            print(report.format_table())

        table = self.comparison_table()
        hydronet = table[table["model"] == "hydronet"].set_index("channel")["mae"]
        persistence = table[table["model"] == "persistence"].set_index("channel")["mae"]
        print("\n" + "=" * 60)
        for channel in CHANNELS:
            ratio = hydronet[channel] / persistence[channel] if persistence[channel] > 0 else float("nan")
            print(f"{channel:<6} MAE ratio vs persistence: {ratio:.3f}")
        return table

    def comparison_table(self) -> pd.DataFrame:
        return pd.concat([r.to_frame() for r in self.reports.values()], ignore_index=True)

    def save_report(self, filepath: Union[str, Path]) -> None:
        payload = {name: report.to_dict() for name, report in self.reports.items()}
        with open(filepath, "w") as f:
            json.dump(payload, f, indent=2, default=float)
        logger.info("evaluation report saved to %s", filepath)
