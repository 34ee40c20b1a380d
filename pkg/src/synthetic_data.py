"""
Synthetic Sewer Data Generator

Generates physically plausible depth/flow panels on a pipe network with a
known ground truth, including injected leaks, infiltration and blockages,
so the forecasting pipeline can be validated end to end.

Routing is steady state per step: no travel time, no storage.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import AnomalySpec, SimConfig
from .dataset import TimeSeriesPanel
from .errors import ConfigError, DataError, FlowExceedsCapacity
from .graph import PipeEdge, PipeGraph, build_graph
from .hydraulics import CircularPipe

logger = logging.getLogger(__name__)

ANOMALY_COLUMNS = ["kind", "target", "start", "end", "magnitude"]

# nominal sewer sizes (ft)
PIPE_SIZES = (0.67, 0.83, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5, 4.0)
ROUGHNESS_CYCLE = (0.013, 0.012, 0.015)


class SyntheticSewerDataGenerator:
    """
    Generator for synthetic sewer panels.

    Source manholes receive

        base * (1 + diurnal * sin(2 pi t / day) + weekly * sin(2 pi t / week)) + noise

    (clamped at zero); flows are summed downstream in topological order and
    depths follow from Manning normal depth in the relevant pipe.

    Ground truth (per-source base inflow, pipe capacities, anomalies) is kept
    on ``self.ground_truth`` after :meth:`generate`.
    """

    def __init__(self, graph: PipeGraph, config: Optional[SimConfig] = None):
        """
        Parameters:
        -----------
        graph : PipeGraph
            Network to simulate
        config : SimConfig, optional
            Generator settings; ``seed`` None is treated as 0
        """
        self.graph = graph
        self.config = config or SimConfig()
        self.pipes = [CircularPipe.from_edge(edge) for edge in graph.edges]
        self.ground_truth: Dict = {}

        sources = set(graph.source_nodes())
        for node in self.config.source_inflows:
            graph.index_of(node)
            if node not in sources:
                raise ConfigError(f"source inflow override for {node!r}, which has inflowing pipes")

    def seasonal_factor(self) -> np.ndarray:
        cfg = self.config
        t = np.arange(cfg.duration, dtype=np.float64)
        return (1.0
                + cfg.diurnal_amplitude * np.sin(2.0 * np.pi * t / cfg.steps_per_day)
                + cfg.weekly_amplitude * np.sin(2.0 * np.pi * t / cfg.steps_per_week))

    def source_inflows(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        """Inflow series of every source node, drawn in node order."""
        cfg = self.config
        factor = self.seasonal_factor()
        inflows = {}
        for node in self.graph.source_nodes():
            base = cfg.source_inflows.get(node, cfg.base_inflow)
            noise = rng.normal(0.0, cfg.noise_std, cfg.duration) if cfg.noise_std > 0 else 0.0
            inflows[node] = np.maximum(base * factor + noise, 0.0)
        return inflows

    def _check_anomalies(self, anomalies: Sequence[AnomalySpec]) -> None:
        for anomaly in anomalies:
            if anomaly.end > self.config.duration:
                raise ConfigError(
                    f"anomaly on {anomaly.target!r} ends at {anomaly.end}, after duration {self.config.duration}"
                )
            if anomaly.is_edge_target:
                self.graph.find_edge(anomaly.target)
            else:
                self.graph.index_of(anomaly.target)

    def _multiplier(self, anomalies: Sequence[AnomalySpec], target: str) -> np.ndarray:
        """Combined leak/infiltration factor on one node or pipe."""
        factor = np.ones(self.config.duration)
        for anomaly in anomalies:
            if anomaly.target != target or anomaly.kind == "blockage":
                continue
            scale = 1.0 - anomaly.magnitude if anomaly.kind == "leak" else 1.0 + anomaly.magnitude
            factor[anomaly.start:anomaly.end] *= scale
        return factor

    def _blockage_caps(self, anomalies: Sequence[AnomalySpec]) -> Dict[int, np.ndarray]:
        caps: Dict[int, np.ndarray] = {}
        for anomaly in anomalies:
            if anomaly.kind != "blockage":
                continue
            if anomaly.is_edge_target:
                edge_ids = [self.graph.find_edge(anomaly.target)]
            else:
                edge_ids = [e for _, e in self.graph.out_neighbors(anomaly.target)]
                if not edge_ids:
                    logger.warning("blockage on %s has no outgoing pipe to restrict", anomaly.target)
            for e in edge_ids:
                cap = caps.setdefault(e, np.full(self.config.duration, np.inf))
                limit = (1.0 - anomaly.magnitude) * self.pipes[e].full_flow
                cap[anomaly.start:anomaly.end] = np.minimum(cap[anomaly.start:anomaly.end], limit)
        return caps

    def route(self, inflows: Dict[str, np.ndarray],
              anomalies: Sequence[AnomalySpec] = ()) -> Tuple[Dict[str, np.ndarray], List[np.ndarray]]:
        """
        Steady routing of all steps at once.

        Returns:
        --------
        node_flow : dict
            node id -> (T,) flow arriving at the node
        edge_flow : list
            (T,) flow carried by each pipe, in edge order
        """
        cfg = self.config
        graph = self.graph
        factor = self.seasonal_factor()
        caps = self._blockage_caps(anomalies)
        edge_flow: List[Optional[np.ndarray]] = [None] * graph.n_edges
        node_flow: Dict[str, np.ndarray] = {}

        for node in graph.topological_order():
            upstream = graph.in_neighbors(node)
            if upstream:
                total = cfg.lateral_inflow * factor
                for _, e in upstream:
                    total = total + edge_flow[e]
            else:
                total = inflows[node]
            total = total * self._multiplier(anomalies, node)
            node_flow[node] = total

            downstream = graph.out_neighbors(node)
            capacity = np.array([self.pipes[e].full_flow for _, e in downstream])
            for (_, e), share in zip(downstream, capacity / capacity.sum() if downstream else []):
                flow = total * share * self._multiplier(anomalies, graph.edges[e].key)
                if e in caps:
                    flow = np.minimum(flow, caps[e])
                edge_flow[e] = flow
        return node_flow, edge_flow

    def depth_pipe(self, node: str) -> Optional[int]:
        """
        Pipe whose normal depth is reported at ``node``.

        Sources and confluences read their outgoing pipe (the largest when
        several); confluence outlets read the largest inflowing pipe; nodes
        with one inflowing pipe read that pipe.
        """
        incoming = [e for _, e in self.graph.in_neighbors(node)]
        outgoing = [e for _, e in self.graph.out_neighbors(node)]
        largest = lambda ids: max(ids, key=lambda e: (self.graph.edges[e].diameter, -e))
        if len(incoming) == 1:
            return incoming[0]
        if outgoing:
            return largest(outgoing)
        if incoming:
            return largest(incoming)
        return None

    def generate(self, anomalies: Sequence[AnomalySpec] = ()) -> Tuple[TimeSeriesPanel, Dict]:
        """
        Generate a complete panel.

        Returns:
        --------
        panel : TimeSeriesPanel
            T x N x 2 depth/flow panel in graph node order
        ground_truth : dict
            Parameters used for generation
        """
        cfg = self.config
        anomalies = list(anomalies)
        self._check_anomalies(anomalies)
        rng = np.random.default_rng(cfg.seed if cfg.seed is not None else 0)

        inflows = self.source_inflows(rng)
        node_flow, edge_flow = self.route(inflows, anomalies)

        values = np.zeros((cfg.duration, self.graph.n_nodes, 2))
        for i, node in enumerate(self.graph.nodes):
            values[:, i, 1] = node_flow[node]
            e = self.depth_pipe(node)
            if e is None:
                continue
            try:
                values[:, i, 0] = self.pipes[e].depths(edge_flow[e], allow_surcharge=cfg.allow_surcharge)
            except FlowExceedsCapacity:
                step = int(np.argmax(edge_flow[e] > self.pipes[e].full_flow))
                raise FlowExceedsCapacity(
                    f"pipe {self.graph.edges[e].key} overflows at step {step}: "
                    f"{edge_flow[e][step]:.4g} cfs > capacity {self.pipes[e].full_flow:.4g} cfs"
                ) from None

        timestamps = cfg.start_timestamp + cfg.stride * np.arange(cfg.duration, dtype=np.int64)
        panel = TimeSeriesPanel(timestamps, values, self.graph.nodes)

        self.ground_truth = {
            "seed": cfg.seed,
            "source_base_inflow": {n: cfg.source_inflows.get(n, cfg.base_inflow) for n in inflows},
            "pipe_capacity": {edge.key: pipe.full_flow for edge, pipe in zip(self.graph.edges, self.pipes)},
            "anomalies": [a.model_dump() for a in anomalies],
        }
        logger.info("simulated %d steps on %s with %d anomalies", cfg.duration, self.graph, len(anomalies))
        return panel, self.ground_truth


def generate_dataset(graph: PipeGraph, config: Optional[SimConfig] = None,
                     anomalies: Sequence[AnomalySpec] = ()) -> TimeSeriesPanel:
    """Deterministic given ``config.seed``."""
    panel, _ = SyntheticSewerDataGenerator(graph, config).generate(anomalies)
    return panel


# ---------------------------------------------------------------------------
# demo networks
# ---------------------------------------------------------------------------

def _design_pipe(upstream: str, downstream: str, i: int, n_sources: int, base_inflow: float,
                 trunk: bool) -> PipeEdge:
    """Smallest nominal pipe carrying twice the peak design flow."""
    design_flow = n_sources * base_inflow * 1.4
    slope = 0.004 + 0.012 / n_sources if trunk else 0.010 + 0.002 * (i % 3)
    roughness = ROUGHNESS_CYCLE[i % len(ROUGHNESS_CYCLE)]
    for diameter in PIPE_SIZES:
        pipe = CircularPipe(diameter, slope, roughness)
        if pipe.full_flow >= 2.0 * design_flow:
            break
    length = 200.0 + 37.0 * ((7 * i) % 11)
    area = np.pi * diameter ** 2 / 4.0
    return PipeEdge(
        upstream=upstream,
        downstream=downstream,
        length=length,
        roughness=roughness,
        diameter=diameter,
        slope=slope,
        gis_length=length * (1.0 + 0.01 * (i % 4)),
        max_flow=design_flow,
        max_velocity=1.6 * design_flow / area,
        max_over_full_flow=design_flow / pipe.full_flow,
        max_over_full_depth=pipe.depth(design_flow) / diameter,
    )


def demo_graph(n_nodes: int = 8, base_inflow: float = 1.0) -> PipeGraph:
    """
    Deterministic dendritic network ``MH01 .. MHnn`` draining to the last node.

    About half the manholes are sources feeding a trunk line; pipes are sized
    for twice the peak flow at ``base_inflow`` so default simulations never
    surcharge.
    """
    if n_nodes < 2:
        raise DataError(f"demo network needs at least 2 nodes, got {n_nodes}")
    width = len(str(n_nodes))
    ids = [f"MH{i + 1:0{max(width, 2)}d}" for i in range(n_nodes)]
    n_sources = max(1, (n_nodes + 1) // 2) if n_nodes > 2 else 1
    sources, trunk = ids[:n_sources], ids[n_sources:]

    load = {node: 1 for node in sources}
    load.update({node: 0 for node in trunk})
    parent = {}
    for i, node in enumerate(sources):
        parent[node] = trunk[min(max(i - 1, 0), max(len(trunk) - 2, 0))]
    for a, b in zip(trunk[:-1], trunk[1:]):
        parent[a] = b

    # accumulate upstream source counts in drainage order
    for node in sources + trunk[:-1]:
        load[parent[node]] += load[node]

    edges = [
        _design_pipe(node, parent[node], i, load[node], base_inflow, trunk=node in trunk)
        for i, node in enumerate(sources + trunk[:-1])
    ]
    return build_graph(ids, edges, trunk[-1])


# ---------------------------------------------------------------------------
# anomaly labels
# ---------------------------------------------------------------------------

def save_anomaly_labels(anomalies: Sequence[AnomalySpec], path: Union[str, Path]) -> None:
    """Write ``kind,target,start,end,magnitude``."""
    rows = [[a.kind, a.target, a.start, a.end, a.magnitude] for a in anomalies]
    pd.DataFrame(rows, columns=ANOMALY_COLUMNS).to_csv(path, index=False)


def load_anomaly_labels(path: Union[str, Path]) -> List[AnomalySpec]:
    df = pd.read_csv(path, dtype={"target": str})
    missing = [c for c in ANOMALY_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"anomaly label file {path} is missing columns {missing}")
    return [
        AnomalySpec(kind=str(row["kind"]), target=str(row["target"]), start=int(row["start"]),
                    end=int(row["end"]), magnitude=float(row["magnitude"]))
        for row in df.to_dict("records")
    ]
