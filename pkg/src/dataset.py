"""
Panel Data I/O

Loads, validates, normalizes, splits and windows wide-format depth/flow
panels. The CSV layout is one row per timestep:

    timestamp,<node>_depth,<node>_flow,<node>_depth,<node>_flow,...

Values are depth in ft (channel 0) and flow in cfs (channel 1).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from .config import SplitSpec, WindowSpec
from .errors import (
    DataError,
    EmptyFile,
    MissingNodeColumn,
    NaNValue,
    NonUniformStride,
    ShapeMismatch,
    TooShort,
    ZeroVariance,
)
from .graph import ATTRIBUTE_NAMES, PipeGraph

logger = logging.getLogger(__name__)

CHANNELS = ("depth", "flow")
PROVENANCE_SOURCES = ("sensor", "simulated")


def channel_index(channel: Union[int, str]) -> int:
    if isinstance(channel, str):
        try:
            return CHANNELS.index(channel)
        except ValueError:
            raise DataError(f"unknown channel {channel!r}; expected one of {CHANNELS}")
    if channel not in (0, 1):
        raise DataError(f"channel index must be 0 or 1, got {channel}")
    return int(channel)


@dataclass(eq=False)
class TimeSeriesPanel:
    """
    Depth/flow observations for every node of a network.

    Attributes:
    -----------
    timestamps : np.ndarray (T,)
        Strictly increasing epoch seconds at a fixed stride
    values : np.ndarray (T, N, 2)
        Channel 0 = depth (ft), channel 1 = flow (cfs)
    node_order : tuple of str
        Node ids in graph order
    provenance : dict, optional
        node id -> "sensor" | "simulated"; informational only
    """

    timestamps: np.ndarray
    values: np.ndarray
    node_order: Tuple[str, ...]
    provenance: Optional[Dict[str, str]] = field(default=None, compare=False)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.node_order = tuple(str(n) for n in self.node_order)
        if self.values.ndim != 3 or self.values.shape[2] != 2:
            raise ShapeMismatch(f"panel values must be T x N x 2, got {self.values.shape}")
        if self.values.shape[0] != self.timestamps.shape[0]:
            raise ShapeMismatch(
                f"{self.timestamps.shape[0]} timestamps for {self.values.shape[0]} rows"
            )
        if self.values.shape[1] != len(self.node_order):
            raise ShapeMismatch(
                f"{len(self.node_order)} node ids for {self.values.shape[1]} panel columns"
            )

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def stride(self) -> Optional[int]:
        if self.n_steps < 2:
            return None
        return int(self.timestamps[1] - self.timestamps[0])

    def slice(self, start: int, end: int) -> "TimeSeriesPanel":
        return TimeSeriesPanel(self.timestamps[start:end].copy(), self.values[start:end].copy(),
                               self.node_order, self.provenance)

    def with_values(self, values: np.ndarray) -> "TimeSeriesPanel":
        return TimeSeriesPanel(self.timestamps.copy(), values, self.node_order, self.provenance)

    def node_series(self, node: str, channel: Union[int, str]) -> np.ndarray:
        try:
            col = self.node_order.index(str(node))
        except ValueError:
            raise MissingNodeColumn(f"node {node!r} is not in the panel")
        return self.values[:, col, channel_index(channel)]

    def channel(self, channel: Union[int, str]) -> np.ndarray:
        """(T, N) view of one channel."""
        return self.values[:, :, channel_index(channel)]

    def columns(self) -> List[str]:
        return ["timestamp"] + [f"{n}_{c}" for n in self.node_order for c in CHANNELS]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values.reshape(self.n_steps, -1), columns=self.columns()[1:])
        df.insert(0, "timestamp", self.timestamps)
        return df

    def check_graph(self, graph: PipeGraph) -> None:
        if tuple(graph.nodes) != self.node_order:
            raise ShapeMismatch("panel node order does not match the graph node order")


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _infer_node_order(columns: Sequence[str]) -> List[str]:
    nodes = []
    for col in columns:
        if col.endswith("_depth"):
            nodes.append(col[: -len("_depth")])
    return nodes


def load_panel(path: Union[str, Path], graph: Optional[PipeGraph] = None,
               provenance: Optional[Union[str, Path]] = None) -> TimeSeriesPanel:
    """
    Load a wide-format panel CSV aligned to the graph node order.

    Without a graph the node order follows the header.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"panel file not found: {path}")
    try:
        df = pd.read_csv(path, dtype={"timestamp": "int64"}, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise EmptyFile(f"panel file {path} is empty")
    except ValueError as exc:
        raise DataError(f"panel file {path}: {exc}")
    if df.empty:
        raise EmptyFile(f"panel file {path} has a header but no rows")
    if "timestamp" not in df.columns:
        raise MissingNodeColumn(f"panel file {path} has no 'timestamp' column")

    node_order = list(graph.nodes) if graph is not None else _infer_node_order(df.columns)
    wanted = []
    for node in node_order:
        for channel in CHANNELS:
            col = f"{node}_{channel}"
            if col not in df.columns:
                raise MissingNodeColumn(f"panel file {path} is missing column {col!r}")
            wanted.append(col)

    df = df.sort_values("timestamp", kind="mergesort").reset_index(drop=True)
    timestamps = df["timestamp"].to_numpy(dtype=np.int64)
    if len(timestamps) > 1:
        steps = np.diff(timestamps)
        bad = np.flatnonzero(steps != steps[0])
        if steps[0] <= 0 or bad.size:
            row = int(bad[0]) + 1 if bad.size else 1
            raise NonUniformStride(
                f"timestamp stride changes at row {row} (t={timestamps[row]}); "
                f"expected {int(steps[0])} s"
            )

    frame = df[wanted].apply(pd.to_numeric, errors="coerce")
    missing = frame.isna().to_numpy()
    if missing.any():
        row, col = np.argwhere(missing)[0]
        raise NaNValue(f"missing value at row {row} (t={timestamps[row]}) column {wanted[col]!r}")

    values = frame.to_numpy(dtype=np.float64).reshape(len(timestamps), len(node_order), 2)
    source = load_provenance(provenance, node_order) if provenance is not None else None
    panel = TimeSeriesPanel(timestamps, values, tuple(node_order), source)
    logger.info("loaded panel %s: T=%d N=%d", path, panel.n_steps, panel.n_nodes)
    return panel


def save_panel(panel: TimeSeriesPanel, path: Union[str, Path]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    panel.to_frame().to_csv(path, index=False)


def load_provenance(path: Union[str, Path], node_order: Optional[Sequence[str]] = None) -> Dict[str, str]:
    """Read the ``node_id,source`` sidecar. It never influences the model."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"provenance file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str)
    except pd.errors.EmptyDataError:
        raise EmptyFile(f"provenance file {path} is empty")
    except (ValueError, OSError) as exc:
        raise DataError(f"provenance file {path}: {exc}")
    if list(df.columns) != ["node_id", "source"]:
        raise DataError(f"provenance file {path} must have columns node_id,source")
    result = dict(zip(df["node_id"], df["source"]))
    for node, source in result.items():
        if source not in PROVENANCE_SOURCES:
            raise DataError(f"provenance for {node!r} must be one of {PROVENANCE_SOURCES}, got {source!r}")
    if node_order is not None:
        unknown = set(result) - set(node_order)
        if unknown:
            raise DataError(f"provenance names nodes not in the panel: {sorted(unknown)}")
    return result


def save_provenance(provenance: Dict[str, str], path: Union[str, Path]) -> None:
    pd.DataFrame({"node_id": list(provenance), "source": list(provenance.values())}).to_csv(
        path, index=False
    )


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------

def split_sizes(n_steps: int, spec: SplitSpec) -> Tuple[int, int, int]:
    n_train = int(np.floor(spec.train * n_steps + 1e-9))
    n_val = int(np.floor(spec.val * n_steps + 1e-9))
    return n_train, n_val, n_steps - n_train - n_val


def chronological_split(panel: TimeSeriesPanel, spec: Optional[SplitSpec] = None,
                        window: Optional[WindowSpec] = None
                        ) -> Tuple[TimeSeriesPanel, TimeSeriesPanel, TimeSeriesPanel]:
    """
    Contiguous train/val/test segments in time order.

    Train and val get floor(ratio * T) steps, test gets the remainder. When a
    window spec is given the panel must hold at least 3 * (L + H) steps.
    """
    spec = spec or SplitSpec()
    total = panel.n_steps
    if window is not None and total < 3 * window.span:
        raise TooShort(f"panel of {total} steps is shorter than 3 * (L + H) = {3 * window.span}")
    n_train, n_val, n_test = split_sizes(total, spec)
    if min(n_train, n_val, n_test) < 1:
        raise TooShort(f"panel of {total} steps leaves an empty split ({n_train}/{n_val}/{n_test})")
    return (
        panel.slice(0, n_train),
        panel.slice(n_train, n_train + n_val),
        panel.slice(n_train + n_val, total),
    )


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NormStats:
    """
    z-score statistics.

    ``mean``/``std`` have shape (2,) in global mode, (N, 2) in per_node mode
    and (9,) for edge attributes. Population standard deviation.
    """

    mean: np.ndarray
    std: np.ndarray
    mode: str = "global"

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> Dict:
        return {"mode": self.mode, "mean": np.asarray(self.mean).tolist(),
                "std": np.asarray(self.std).tolist()}

    @classmethod
    def from_dict(cls, data: Dict) -> "NormStats":
        return cls(mean=np.asarray(data["mean"], dtype=np.float64),
                   std=np.asarray(data["std"], dtype=np.float64),
                   mode=data.get("mode", "global"))


def _fit_scaler(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    scaler = StandardScaler().fit(matrix)
    std = np.sqrt(scaler.var_)
    # exact zero for constant columns; var_ can carry rounding residue
    std[np.ptp(matrix, axis=0) == 0] = 0.0
    return scaler.mean_.astype(np.float64), std


def fit_normalizer(train: TimeSeriesPanel, mode: str = "global") -> NormStats:
    """Fit z-score statistics on the training split only."""
    if train.n_steps == 0:
        raise TooShort("cannot fit a normalizer on an empty panel")
    if mode == "global":
        mean, std = _fit_scaler(train.values.reshape(-1, 2))
        labels = list(CHANNELS)
    elif mode == "per_node":
        mean, std = _fit_scaler(train.values.reshape(train.n_steps, -1))
        mean, std = mean.reshape(train.n_nodes, 2), std.reshape(train.n_nodes, 2)
        labels = [f"{n}_{c}" for n in train.node_order for c in CHANNELS]
    else:
        raise DataError(f"unknown normalization mode {mode!r}")
    flat = std.reshape(-1)
    if np.any(flat == 0):
        raise ZeroVariance(f"channel {labels[int(np.flatnonzero(flat == 0)[0])]!r} is constant on the training split")
    return NormStats(mean=mean, std=std, mode=mode)


def apply(panel: TimeSeriesPanel, stats: NormStats) -> TimeSeriesPanel:
    return panel.with_values(stats.apply(panel.values))


def invert(panel: TimeSeriesPanel, stats: NormStats) -> TimeSeriesPanel:
    return panel.with_values(stats.invert(panel.values))


def invert_array(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Invert normalization of any (..., N, 2) array (e.g. model outputs)."""
    return stats.invert(values)


def fit_edge_stats(graph: PipeGraph) -> NormStats:
    """
    z-score statistics for the 9 edge attributes.

    Constant columns keep std 1 so they embed as zeros.
    """
    matrix = graph.edge_attr_matrix()
    if matrix.shape[0] == 0:
        return NormStats(mean=np.zeros(len(ATTRIBUTE_NAMES)), std=np.ones(len(ATTRIBUTE_NAMES)), mode="edge")
    mean, std = _fit_scaler(matrix)
    constant = std == 0
    if constant.any():
        logger.warning("constant edge attributes kept unscaled: %s",
                       ", ".join(n for n, c in zip(ATTRIBUTE_NAMES, constant) if c))
        std = np.where(constant, 1.0, std)
    return NormStats(mean=mean, std=std, mode="edge")


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class WindowSet:
    """
    Stacked sliding windows.

    Attributes:
    -----------
    inputs : np.ndarray (W, L, N, 2)
    targets : np.ndarray (W, H, N, 2)
    starts : np.ndarray (W,)
        Index of each window's first input step within its panel
    """

    inputs: np.ndarray
    targets: np.ndarray
    starts: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __getitem__(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.inputs[i], self.targets[i]

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        for i in range(len(self)):
            yield self[i]

    @property
    def lookback(self) -> int:
        return self.inputs.shape[1]

    @property
    def horizon(self) -> int:
        return self.targets.shape[1]

    def select(self, index) -> "WindowSet":
        return WindowSet(self.inputs[index], self.targets[index], self.starts[index])


def make_windows(panel: Union[TimeSeriesPanel, np.ndarray], spec: WindowSpec) -> WindowSet:
    """Stride-1 windows; count = T - L - H + 1. Apply per split."""
    values = panel.values if isinstance(panel, TimeSeriesPanel) else np.asarray(panel, dtype=np.float64)
    total = values.shape[0]
    if total < spec.span:
        raise TooShort(f"{total} steps cannot hold a window of L + H = {spec.span}")
    view = np.lib.stride_tricks.sliding_window_view(values, spec.span, axis=0)
    stacked = np.ascontiguousarray(np.moveaxis(view, -1, 1))
    return WindowSet(
        inputs=stacked[:, : spec.lookback],
        targets=stacked[:, spec.lookback:],
        starts=np.arange(stacked.shape[0]),
    )
