"""
HydroNet command-line entry point

Runs the sewer forecasting pipeline: simulate a network, analyze a panel,
train, evaluate against baselines, forecast, detect anomalies and check
gradients.

    python -m src.main [--config run.yaml] [--seed N] [--out DIR] <command> [options]
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .analysis import acf_frame, edge_corr_frame, plot_analysis, summary_table
from .checkpoint import load_checkpoint, save_checkpoint
from .config import AnomalySpec, RunConfig, dump_config, load_config
from .dataset import (
    TimeSeriesPanel,
    apply,
    chronological_split,
    fit_normalizer,
    load_panel,
    make_windows,
    save_panel,
    save_provenance,
    split_sizes,
)
from .errors import ConfigError, DataError, NumericalError, exit_code_for
from .evaluation import (
    ForecastEvaluator,
    detect_anomalies,
    residual_stats,
    rolling_forecast,
    save_events,
)
from .gradcheck import format_results, results_frame, run_gradcheck
from .graph import PipeGraph, load_graph, save_graph
from .synthetic_data import SyntheticSewerDataGenerator, demo_graph, save_anomaly_labels
from .training import train

logger = logging.getLogger("src.main")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _out_dir(config: RunConfig) -> Path:
    out = Path(config.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_graph(config: RunConfig) -> PipeGraph:
    graph_dir = config.paths.graph_dir
    if graph_dir is None:
        raise ConfigError("no graph directory: pass --graph-dir or set paths.graph_dir")
    return load_graph(graph_dir)


def _resolve_panel(config: RunConfig, graph: Optional[PipeGraph]) -> TimeSeriesPanel:
    path = config.paths.panel
    if path is None:
        raise ConfigError("no panel: pass --panel or set paths.panel")
    return load_panel(path, graph, provenance=config.paths.provenance)


def _checkpoint_path(config: RunConfig) -> Path:
    path = config.paths.checkpoint
    return Path(path) if path is not None else Path(config.paths.out_dir) / "checkpoint.zip"


def _split(panel: TimeSeriesPanel, config: RunConfig) -> Tuple[TimeSeriesPanel, TimeSeriesPanel, TimeSeriesPanel]:
    return chronological_split(panel, config.split, config.window)


def _test_offset(panel: TimeSeriesPanel, config: RunConfig) -> int:
    n_train, n_val, _ = split_sizes(panel.n_steps, config.split)
    return n_train + n_val


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args, config: RunConfig) -> int:
    out = _out_dir(config)
    graph_dir = config.paths.graph_dir
    graph = load_graph(graph_dir) if graph_dir is not None else demo_graph(config.sim.nodes, config.sim.base_inflow)

    sim = config.effective_sim()
    generator = SyntheticSewerDataGenerator(graph, sim)
    panel, truth = generator.generate(config.anomalies)

    save_graph(graph, out / "graph")
    save_panel(panel, out / "panel.csv")
    save_anomaly_labels(config.anomalies, out / "anomalies.csv")
    save_provenance({node: "simulated" for node in graph.nodes}, out / "provenance.csv")

    print("=" * 60)
    print("SIMULATED SEWER PANEL")
    print("=" * 60)
    print(f"  Network:    {graph.n_nodes} manholes, {graph.n_edges} pipes, outlet {graph.outlet}")
    print(f"  Steps:      {panel.n_steps} x {sim.stride} s (seed {sim.seed})")
    print(f"  Anomalies:  {len(config.anomalies)}")
    print(f"  Outlet flow mean: {panel.node_series(graph.outlet, 'flow').mean():.4f} cfs")
    print(f"\n  Panel  -> {out / 'panel.csv'}")
    print(f"  Labels -> {out / 'anomalies.csv'}")
    print(f"  Graph  -> {out / 'graph'}")
    logger.debug("pipe capacities: %s", truth["pipe_capacity"])
    return 0


def cmd_analyze(args, config: RunConfig) -> int:
    out = _out_dir(config)
    graph = _resolve_graph(config)
    panel = _resolve_panel(config, graph)
    node = args.node or graph.outlet
    max_lag = args.max_lag if args.max_lag is not None else min(432, panel.n_steps - 1)

    acf_table = acf_frame(panel, node, max_lag)
    acf_table.to_csv(out / "acf.csv", index=False)
    summary = summary_table(panel)
    summary.to_csv(out / "summary.csv", index=False)

    print("=" * 60)
    print(f"PANEL ANALYSIS ({panel.n_steps} steps, {panel.n_nodes} nodes)")
    print("=" * 60)
    print(summary.to_string(index=False, float_format=lambda v: f"{v:.4f}"))

    daily = min(panel.n_steps - 1, max_lag, 86400 // (panel.stride or 600))
    print(f"\nACF at node {node}: lag 0 = {acf_table.loc[0, 'flow']:.3f}, "
          f"lag {daily} = {acf_table.loc[daily, 'flow']:.3f} (flow)")

    if graph.n_edges >= 2:
        corr = edge_corr_frame(graph)
        corr.to_csv(out / "edge_corr.csv")
        print("\nEdge attribute correlations:")
        print(corr.to_string(float_format=lambda v: f"{v:+.2f}"))
    else:
        logger.warning("edge correlation needs at least 2 pipes; skipped")

    if args.plot:
        path = plot_analysis(panel, graph, args.plot, node=node, max_lag=max_lag)
        print(f"\nFigure -> {path}")
    return 0


def cmd_train(args, config: RunConfig) -> int:
    out = _out_dir(config)
    graph = _resolve_graph(config)
    panel = _resolve_panel(config, graph)
    train_panel, val_panel, _ = _split(panel, config)

    train_config = config.effective_train()
    stats = fit_normalizer(train_panel, mode=train_config.norm)
    train_windows = make_windows(apply(train_panel, stats), config.window)
    val_windows = make_windows(apply(val_panel, stats), config.window)
    logger.info("windows: %d train, %d val", len(train_windows), len(val_windows))

    checkpoint, history = train(graph, train_windows, val_windows, config.effective_model(),
                                train_config, stats)
    path = save_checkpoint(checkpoint, _checkpoint_path(config))
    history.to_csv(out / "history.csv", index=False)

    print("=" * 60)
    print("TRAINING COMPLETE")
    print("=" * 60)
    print(f"  Epochs run:     {len(history)}")
    print(f"  Best epoch:     {checkpoint.epoch}")
    print(f"  Best val loss:  {checkpoint.best_val_loss:.6f} ({train_config.loss}, normalized)")
    print(f"  Checkpoint ->   {path}")
    print(f"  History    ->   {out / 'history.csv'}")
    return 0


def cmd_evaluate(args, config: RunConfig) -> int:
    out = _out_dir(config)
    graph = _resolve_graph(config)
    panel = _resolve_panel(config, graph)
    checkpoint = load_checkpoint(_checkpoint_path(config))

    _, _, test_panel = _split(panel, config)
    test_windows = make_windows(test_panel, config.window)
    evaluator = ForecastEvaluator(checkpoint, graph, config.eval)
    table = evaluator.run_comparison(panel, test_windows, _test_offset(panel, config))

    table.to_csv(out / "metrics.csv", index=False)
    evaluator.reports["hydronet"].per_horizon.to_csv(out / "metrics_per_horizon.csv", index=False)
    evaluator.save_report(out / "evaluation.json")
    print(f"\nMetrics -> {out / 'metrics.csv'}")
    return 0


def cmd_forecast(args, config: RunConfig) -> int:
    out = _out_dir(config)
    graph = _resolve_graph(config)
    panel = _resolve_panel(config, graph)
    checkpoint = load_checkpoint(_checkpoint_path(config))
    model = checkpoint.to_model(graph)
    lookback, horizon = checkpoint.model_config.lookback, checkpoint.model_config.horizon

    t = panel.n_steps if args.t is None else args.t
    if not lookback <= t <= panel.n_steps:
        raise DataError(f"forecast origin t={t} needs {lookback} observed steps before it "
                        f"(panel has {panel.n_steps})")
    window = checkpoint.norm_stats.apply(panel.values[t - lookback:t])
    forecast = checkpoint.norm_stats.invert(model.predict(window))

    stride = panel.stride or 600
    timestamps = panel.timestamps[t - 1] + stride * np.arange(1, horizon + 1, dtype=np.int64)
    result = TimeSeriesPanel(timestamps, forecast, panel.node_order)
    path = Path(args.output) if args.output else out / "forecast.csv"
    save_panel(result, path)

    print(f"Forecast of {horizon} steps from t={t} ({panel.n_nodes} nodes) -> {path}")
    print(result.to_frame().head(horizon).to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return 0


def cmd_detect(args, config: RunConfig) -> int:
    out = _out_dir(config)
    graph = _resolve_graph(config)
    panel = _resolve_panel(config, graph)
    checkpoint = load_checkpoint(_checkpoint_path(config))
    step = config.eval.forecast_step

    reference = load_panel(config.paths.reference, graph) if config.paths.reference else panel
    _, ref_val, _ = _split(reference, config)
    stats = residual_stats(ref_val, rolling_forecast(checkpoint, ref_val, graph, step))

    forecast = rolling_forecast(checkpoint, panel, graph, step)
    events = detect_anomalies(panel, forecast, stats, config.eval.anomaly_k, config.eval.anomaly_m)
    save_events(events, out / "events.csv")

    print("=" * 60)
    print(f"ANOMALY DETECTION (k={config.eval.anomaly_k:g}, m={config.eval.anomaly_m})")
    print("=" * 60)
    if not events:
        print("  No events detected.")
    for e in events:
        print(f"  {e.node:<10} {e.channel:<6} steps {e.start:>6}-{e.end:<6} peak |z| = {e.peak_zscore:.2f}")
    print(f"\nEvents -> {out / 'events.csv'}")
    return 0


def cmd_gradcheck(args, config: RunConfig) -> int:
    out = _out_dir(config)
    results = run_gradcheck(seed=config.seed, include_model=not args.skip_model)
    results_frame(results).to_csv(out / "gradcheck.csv", index=False)
    print(format_results(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericalError(f"gradient check failed for {', '.join(failed)}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "forecast": cmd_forecast,
    "detect": cmd_detect,
    "gradcheck": cmd_gradcheck,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common_options() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand default from clobbering a value given before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--print-config", action="store_true", default=argparse.SUPPRESS,
                        help="print the effective configuration and exit")
    common.add_argument("--log-level", default=argparse.SUPPRESS,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="hydronet", description="HydroNet sewer forecasting engine",
                                     parents=[common])
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic panel")
    p.add_argument("--nodes", type=int, help="demo network size (default 8)")
    p.add_argument("--graph-dir", help="simulate on an existing nodes.csv/edges.csv network")
    p.add_argument("--duration", type=int, help="number of steps")
    p.add_argument("--anomaly", action="append", default=[], metavar="KIND:TARGET:START:END:MAG")

    p = sub.add_parser("analyze", parents=[common], help="ACF and edge-attribute correlations")
    p.add_argument("--graph-dir")
    p.add_argument("--panel")
    p.add_argument("--max-lag", type=int)
    p.add_argument("--node")
    p.add_argument("--plot", metavar="PNG")

    for name, text in [("train", "train HydroNet"), ("evaluate", "score against baselines"),
                       ("forecast", "forecast H steps"), ("detect", "flag anomalies")]:
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--graph-dir")
        p.add_argument("--panel")
        p.add_argument("--checkpoint")
        if name == "forecast":
            p.add_argument("--t", type=int, help="forecast origin step (default: end of panel)")
            p.add_argument("--output", help="forecast CSV path")
        if name == "detect":
            p.add_argument("--reference", help="clean panel for residual statistics")
            p.add_argument("--k", type=float, help="|z| threshold")
            p.add_argument("--m", type=int, help="minimum run length in steps")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--skip-model", action="store_true", help="primitives only")
    return parser


def resolve_config(args) -> RunConfig:
    """Load the configuration and apply command-line overrides."""
    config = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "out", None) is not None:
        config.paths.out_dir = Path(args.out)
    for field in ("graph_dir", "panel", "checkpoint", "reference"):
        value = getattr(args, field, None)
        if value is not None:
            setattr(config.paths, field, Path(value))
    if args.command == "simulate":
        if args.duration is not None:
            config.sim.duration = args.duration
        if args.nodes is not None:
            config.sim.nodes = args.nodes
        if args.anomaly:
            config.anomalies = [AnomalySpec.parse(text) for text in args.anomaly]
    if args.command == "detect":
        if args.k is not None:
            config.eval.anomaly_k = args.k
        if args.m is not None:
            config.eval.anomaly_m = args.m
    return config


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(args, "log_level", "INFO"),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        config = resolve_config(args)
        if getattr(args, "print_config", False):
            sys.stdout.write(dump_config(config))
            return 0
        if args.command is None:
            parser.print_help()
            return ConfigError.exit_code
        return COMMANDS[args.command](args, config)
    except Exception as exc:
        code = exit_code_for(exc)
        if code == 1:
            raise
        message = " ".join(str(exc).split())
        print(f"error kind={type(exc).__name__} code={code} message={message}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
