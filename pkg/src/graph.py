"""
Sewer Network Graph

Models the wastewater network as a directed acyclic graph: manholes are
nodes, pipes are edges pointing downstream. Node and edge order is frozen at
build time; every matrix and tensor in the engine indexes by these positions.

Each pipe carries nine static attributes, stored in this column order:

    length, roughness, geom1 (diameter), slope, gis_length,
    max_flow, max_velocity, max_full_flow, max_full_depth
"""

import hashlib
import logging
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd

from .errors import (
    CycleDetected,
    DanglingEdge,
    DataError,
    DisconnectedComponent,
    DuplicateNode,
    EmptyFile,
    OutletHasOutflow,
    UnknownNode,
)

logger = logging.getLogger(__name__)

NODE_COLUMNS = ["node_id", "is_outlet"]
EDGE_COLUMNS = [
    "from", "to", "length", "roughness", "geom1", "slope", "gis_length",
    "max_flow", "max_velocity", "max_full_flow", "max_full_depth",
]
ATTRIBUTE_NAMES = EDGE_COLUMNS[2:]
N_EDGE_FEATURES = len(ATTRIBUTE_NAMES)


@dataclass(frozen=True)
class PipeEdge:
    """
    A pipe between two manholes.

    Units: length/diameter/gis_length in ft, max_flow in cfs, max_velocity
    in ft/s; roughness is Manning's n; slope and the two ratios are
    dimensionless.
    """

    upstream: str
    downstream: str
    length: float
    roughness: float
    diameter: float
    slope: float
    gis_length: float
    max_flow: float
    max_velocity: float
    max_over_full_flow: float
    max_over_full_depth: float

    def __post_init__(self):
        if self.upstream == self.downstream:
            raise CycleDetected(f"pipe {self.key} is a self-loop")
        for name in ("length", "roughness", "diameter", "slope"):
            value = getattr(self, name)
            if not value > 0:
                raise DataError(f"pipe {self.key}: {name} must be > 0, got {value}")
        for name in ("gis_length", "max_flow", "max_velocity",
                     "max_over_full_flow", "max_over_full_depth"):
            value = getattr(self, name)
            if not value >= 0:
                raise DataError(f"pipe {self.key}: {name} must be >= 0, got {value}")

    @property
    def key(self) -> str:
        return f"{self.upstream}->{self.downstream}"

    @property
    def attributes(self) -> Tuple[float, ...]:
        """The attribute vector a_ij in column order."""
        return astuple(self)[2:]


class PipeGraph:
    """
    Validated, immutable sewer graph.

    Build instances with :func:`build_graph`; the constructor assumes its
    inputs were already checked.
    """

    def __init__(self, nodes: Sequence[str], edges: Sequence[PipeEdge], outlet: str,
                 order: Sequence[str]):
        self._nodes = tuple(nodes)
        self._edges = tuple(edges)
        self._outlet = outlet
        self._index = {node: i for i, node in enumerate(self._nodes)}
        self._order = tuple(order)

        in_adj: Dict[str, List[Tuple[str, int]]] = {node: [] for node in self._nodes}
        out_adj: Dict[str, List[Tuple[str, int]]] = {node: [] for node in self._nodes}
        for e, edge in enumerate(self._edges):
            in_adj[edge.downstream].append((edge.upstream, e))
            out_adj[edge.upstream].append((edge.downstream, e))
        self._in_adj = {k: tuple(v) for k, v in in_adj.items()}
        self._out_adj = {k: tuple(v) for k, v in out_adj.items()}

        self._sources = np.array([self._index[e.upstream] for e in self._edges], dtype=np.int64)
        self._targets = np.array([self._index[e.downstream] for e in self._edges], dtype=np.int64)

    @property
    def nodes(self) -> Tuple[str, ...]:
        return self._nodes

    @property
    def edges(self) -> Tuple[PipeEdge, ...]:
        return self._edges

    @property
    def outlet(self) -> str:
        return self._outlet

    @property
    def n_nodes(self) -> int:
        return len(self._nodes)

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    @property
    def source_index(self) -> np.ndarray:
        """Upstream node index of every edge."""
        return self._sources.copy()

    @property
    def target_index(self) -> np.ndarray:
        """Downstream node index of every edge."""
        return self._targets.copy()

    def index_of(self, node: str) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise UnknownNode(f"unknown node {node!r}") from None

    def in_neighbors(self, node: str) -> List[Tuple[str, int]]:
        """Upstream neighbours of ``node`` as (node, edge-index), in edge order."""
        self.index_of(node)
        return list(self._in_adj[node])

    def out_neighbors(self, node: str) -> List[Tuple[str, int]]:
        self.index_of(node)
        return list(self._out_adj[node])

    def source_nodes(self) -> List[str]:
        """Nodes without inflowing pipes, in node order."""
        return [node for node in self._nodes if not self._in_adj[node]]

    def topological_order(self) -> List[str]:
        """Kahn order, ties broken by node index."""
        return list(self._order)

    def ancestors(self, node: str) -> List[str]:
        """All nodes draining into ``node`` (excluding itself), in node order."""
        self.index_of(node)
        seen = set()
        stack = [node]
        while stack:
            for upstream, _ in self._in_adj[stack.pop()]:
                if upstream not in seen:
                    seen.add(upstream)
                    stack.append(upstream)
        return [n for n in self._nodes if n in seen]

    def descendants(self, node: str) -> List[str]:
        self.index_of(node)
        seen = set()
        stack = [node]
        while stack:
            for downstream, _ in self._out_adj[stack.pop()]:
                if downstream not in seen:
                    seen.add(downstream)
                    stack.append(downstream)
        return [n for n in self._nodes if n in seen]

    def find_edge(self, key: str) -> int:
        """Index of the edge written ``"<from>-><to>"``."""
        upstream, _, downstream = key.partition("->")
        for e, edge in enumerate(self._edges):
            if edge.upstream == upstream and edge.downstream == downstream:
                return e
        raise UnknownNode(f"unknown pipe {key!r}")

    def edge_attr_matrix(self, stats=None) -> np.ndarray:
        """
        E x 9 attribute matrix in column order.

        Parameters:
        -----------
        stats : NormStats, optional
            Column statistics (mean/std of length 9); when given, every column
            is z-scored with them.
        """
        matrix = np.array([edge.attributes for edge in self._edges], dtype=np.float64)
        matrix = matrix.reshape(len(self._edges), N_EDGE_FEATURES)
        if stats is not None:
            matrix = (matrix - np.asarray(stats.mean)) / np.asarray(stats.std)
        return matrix

    def relabel(self, order: Sequence[str]) -> "PipeGraph":
        """Rebuild with nodes listed in ``order`` (same edges, same outlet)."""
        return build_graph(list(order), list(self._edges), self._outlet)

    def fingerprint(self) -> str:
        return graph_fingerprint(self)

    def to_networkx(self) -> nx.MultiDiGraph:
        g = nx.MultiDiGraph()
        g.add_nodes_from(self._nodes)
        for e, edge in enumerate(self._edges):
            g.add_edge(edge.upstream, edge.downstream, key=e)
        return g

    def __repr__(self) -> str:
        return f"PipeGraph(nodes={self.n_nodes}, edges={self.n_edges}, outlet={self._outlet!r})"


def build_graph(nodes: Sequence[str], edges: Sequence[PipeEdge], outlet: str) -> PipeGraph:
    """
    Validate inputs and build a PipeGraph.

    Raises DuplicateNode, DanglingEdge, CycleDetected, DisconnectedComponent
    or OutletHasOutflow.
    """
    nodes = [str(node) for node in nodes]
    if not nodes:
        raise DataError("graph needs at least one node")

    seen = set()
    for node in nodes:
        if not node:
            raise DataError("node ids must be non-empty")
        if node in seen:
            raise DuplicateNode(f"duplicate node {node!r}")
        seen.add(node)

    if outlet not in seen:
        raise UnknownNode(f"outlet {outlet!r} is not a node")

    for edge in edges:
        for endpoint in (edge.upstream, edge.downstream):
            if endpoint not in seen:
                raise DanglingEdge(f"pipe {edge.key} references unknown node {endpoint!r}")

    g = nx.MultiDiGraph()
    g.add_nodes_from(nodes)
    g.add_edges_from((edge.upstream, edge.downstream) for edge in edges)

    if not nx.is_directed_acyclic_graph(g):
        cycle = nx.find_cycle(g)
        path = " -> ".join(str(u) for u, *_ in cycle)
        raise CycleDetected(f"pipes form a cycle: {path}")

    if not nx.is_weakly_connected(g):
        components = sorted(nx.weakly_connected_components(g), key=len)
        raise DisconnectedComponent(
            f"graph has {len(components)} components; smallest: {sorted(components[0])}"
        )

    if g.out_degree(outlet) > 0:
        raise OutletHasOutflow(f"outlet {outlet!r} has {g.out_degree(outlet)} outgoing pipes")

    index = {node: i for i, node in enumerate(nodes)}
    order = list(nx.lexicographical_topological_sort(g, key=index.__getitem__))

    return PipeGraph(nodes, edges, outlet, order)


def topological_order(graph: PipeGraph) -> List[str]:
    """Kahn order of ``graph`` (tie-break by node index)."""
    index = {node: i for i, node in enumerate(graph.nodes)}
    try:
        return list(nx.lexicographical_topological_sort(graph.to_networkx(), key=index.__getitem__))
    except nx.NetworkXUnfeasible as exc:
        raise CycleDetected(str(exc)) from exc


def graph_fingerprint(graph: PipeGraph) -> str:
    """SHA-256 over node ids, outlet and full edge records."""
    h = hashlib.sha256()
    h.update(("nodes:" + "|".join(graph.nodes)).encode("utf-8"))
    h.update(("outlet:" + graph.outlet).encode("utf-8"))
    for edge in graph.edges:
        record = [edge.upstream, edge.downstream] + [repr(float(v)) for v in edge.attributes]
        h.update(("edge:" + ",".join(record)).encode("utf-8"))
    return h.hexdigest()


def edges_from_frame(df: pd.DataFrame) -> List[PipeEdge]:
    missing = [c for c in EDGE_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"edges table missing columns: {missing}")
    return [
        PipeEdge(str(row["from"]), str(row["to"]), *(float(row[c]) for c in ATTRIBUTE_NAMES))
        for row in df.to_dict("records")
    ]


def load_graph(graph_dir: Union[str, Path], nodes_file: str = "nodes.csv",
               edges_file: str = "edges.csv") -> PipeGraph:
    """Load ``nodes.csv`` and ``edges.csv`` from ``graph_dir``."""
    graph_dir = Path(graph_dir)
    nodes_path, edges_path = graph_dir / nodes_file, graph_dir / edges_file
    for path in (nodes_path, edges_path):
        if not path.exists():
            raise DataError(f"graph file not found: {path}")

    nodes_df = pd.read_csv(nodes_path, dtype={"node_id": str}, encoding="utf-8")
    if nodes_df.empty:
        raise EmptyFile(f"{nodes_path} has no rows")
    if list(nodes_df.columns) != NODE_COLUMNS:
        raise DataError(f"{nodes_path} header must be {','.join(NODE_COLUMNS)}")

    outlets = nodes_df.loc[nodes_df["is_outlet"].astype(int) == 1, "node_id"].tolist()
    if len(outlets) != 1:
        raise DataError(f"{nodes_path} must flag exactly one outlet, found {len(outlets)}")

    edges_df = pd.read_csv(edges_path, dtype={"from": str, "to": str}, encoding="utf-8",
                           float_precision="round_trip")
    edges = edges_from_frame(edges_df)

    graph = build_graph(nodes_df["node_id"].tolist(), edges, outlets[0])
    logger.info("loaded graph %s from %s", graph, graph_dir)
    return graph


def save_graph(graph: PipeGraph, graph_dir: Union[str, Path]) -> None:
    graph_dir = Path(graph_dir)
    graph_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({
        "node_id": list(graph.nodes),
        "is_outlet": [int(node == graph.outlet) for node in graph.nodes],
    }).to_csv(graph_dir / "nodes.csv", index=False)
    rows = [[e.upstream, e.downstream, *e.attributes] for e in graph.edges]
    pd.DataFrame(rows, columns=EDGE_COLUMNS).to_csv(graph_dir / "edges.csv", index=False)


def chain_graph(node_ids: Iterable[str], **attrs) -> PipeGraph:
    """Straight chain n0 -> n1 -> ... with identical pipes (tests, demos)."""
    node_ids = list(node_ids)
    edges = [make_pipe(a, b, **attrs) for a, b in zip(node_ids[:-1], node_ids[1:])]
    return build_graph(node_ids, edges, node_ids[-1])


def make_pipe(upstream: str, downstream: str, length: float = 300.0, roughness: float = 0.013,
              diameter: float = 1.0, slope: float = 0.01, gis_length: Optional[float] = None,
              max_flow: float = 1.0, max_velocity: float = 2.0, max_over_full_flow: float = 0.3,
              max_over_full_depth: float = 0.4) -> PipeEdge:
    return PipeEdge(
        upstream, downstream, length, roughness, diameter, slope,
        length if gis_length is None else gis_length,
        max_flow, max_velocity, max_over_full_flow, max_over_full_depth,
    )
