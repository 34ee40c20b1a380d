"""
HydroNet Sewer Forecasting Package

Graph-based spatio-temporal forecasting of manhole depth and flow, with a
Manning-law network simulator, a small reverse-mode autodiff engine,
baseline evaluation and residual anomaly detection.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import (
    AnomalySpec,
    EvalConfig,
    HydroNetConfig,
    RunConfig,
    SimConfig,
    SplitSpec,
    TrainConfig,
    WindowSpec,
    load_config,
)
from .dataset import (
    NormStats,
    TimeSeriesPanel,
    WindowSet,
    chronological_split,
    fit_normalizer,
    load_panel,
    make_windows,
)
from .errors import ConfigError, DataError, HydroNetError, NumericalError
from .evaluation import ForecastEvaluator, MetricReport, detect_anomalies, evaluate
from .graph import PipeEdge, PipeGraph, build_graph, load_graph
from .hydraulics import CircularPipe, manning_full_flow, normal_depth
from .hydronet import HydroNet
from .synthetic_data import SyntheticSewerDataGenerator, demo_graph
from .tensor import Tape, Tensor
from .training import train

__version__ = "1.0.0"
__author__ = "HydroNet Team"

__all__ = [
    'AnomalySpec',
    'Checkpoint',
    'CircularPipe',
    'ConfigError',
    'DataError',
    'EvalConfig',
    'ForecastEvaluator',
    'HydroNet',
    'HydroNetConfig',
    'HydroNetError',
    'MetricReport',
    'NormStats',
    'NumericalError',
    'PipeEdge',
    'PipeGraph',
    'RunConfig',
    'SimConfig',
    'SplitSpec',
    'SyntheticSewerDataGenerator',
    'Tape',
    'Tensor',
    'TimeSeriesPanel',
    'TrainConfig',
    'WindowSet',
    'WindowSpec',
    'build_graph',
    'chronological_split',
    'demo_graph',
    'detect_anomalies',
    'evaluate',
    'fit_normalizer',
    'load_checkpoint',
    'load_config',
    'load_graph',
    'load_panel',
    'make_windows',
    'manning_full_flow',
    'normal_depth',
    'save_checkpoint',
    'train',
]
