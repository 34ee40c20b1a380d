"""
Unit tests for the sewer network graph.
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.dataset import fit_edge_stats
from src.errors import (
    CycleDetected,
    DanglingEdge,
    DisconnectedComponent,
    DuplicateNode,
    OutletHasOutflow,
    UnknownNode,
)
from src.graph import (
    N_EDGE_FEATURES,
    build_graph,
    chain_graph,
    load_graph,
    make_pipe,
    save_graph,
    topological_order,
)
from src.synthetic_data import demo_graph


def confluence():
    return build_graph(["A", "B", "C"], [make_pipe("A", "C"), make_pipe("B", "C")], "C")


class TestBuildGraph(unittest.TestCase):

    def test_minimal_chain(self):
        graph = build_graph(["A", "B"], [make_pipe("A", "B")], "B")
        self.assertEqual(graph.topological_order(), ["A", "B"])
        self.assertEqual(graph.n_nodes, 2)
        self.assertEqual(graph.n_edges, 1)

    def test_two_cycle_rejected(self):
        with self.assertRaises(CycleDetected):
            build_graph(["A", "B"], [make_pipe("A", "B"), make_pipe("B", "A")], "B")

    def test_validation_errors(self):
        with self.assertRaises(DuplicateNode):
            build_graph(["A", "A"], [], "A")
        with self.assertRaises(DanglingEdge):
            build_graph(["A", "B"], [make_pipe("A", "Z")], "B")
        with self.assertRaises(DisconnectedComponent):
            build_graph(["A", "B", "C"], [make_pipe("A", "B")], "B")
        with self.assertRaises(OutletHasOutflow):
            build_graph(["A", "B"], [make_pipe("A", "B")], "A")

    def test_self_loop_rejected(self):
        with self.assertRaises(CycleDetected):
            make_pipe("A", "A")

    def test_rww_sized_tree(self):
        graph = demo_graph(23)
        self.assertEqual((graph.n_nodes, graph.n_edges), (23, 22))
        order = graph.topological_order()
        self.assertEqual(sorted(order), sorted(graph.nodes))
        self.assertEqual(order[-1], graph.outlet)
        position = {node: i for i, node in enumerate(order)}
        for edge in graph.edges:
            self.assertLess(position[edge.upstream], position[edge.downstream])


class TestAdjacency(unittest.TestCase):

    def test_in_neighbors(self):
        chain = chain_graph(["A", "B", "C"])
        self.assertEqual(chain.in_neighbors("C"), [("B", 1)])
        self.assertEqual(chain.in_neighbors("A"), [])
        self.assertEqual(confluence().in_neighbors("C"), [("A", 0), ("B", 1)])

    def test_unknown_node(self):
        with self.assertRaises(UnknownNode):
            chain_graph(["A", "B"]).in_neighbors("Q")

    def test_in_degree_sums_to_edge_count(self):
        graph = demo_graph(15)
        self.assertEqual(sum(len(graph.in_neighbors(n)) for n in graph.nodes), graph.n_edges)

    def test_topological_order_tie_break(self):
        self.assertEqual(topological_order(chain_graph(["A", "B", "C"])), ["A", "B", "C"])
        self.assertEqual(topological_order(confluence()), ["A", "B", "C"])

    def test_ancestors_and_descendants(self):
        graph = chain_graph(["A", "B", "C", "D"])
        self.assertEqual(graph.ancestors("C"), ["A", "B"])
        self.assertEqual(graph.descendants("B"), ["C", "D"])
        self.assertEqual(graph.source_nodes(), ["A"])

    def test_relabel_keeps_edges(self):
        graph = demo_graph(8)
        relabeled = graph.relabel(graph.topological_order()[::-1])
        self.assertEqual(sorted(e.key for e in relabeled.edges), sorted(e.key for e in graph.edges))
        self.assertEqual(relabeled.outlet, graph.outlet)


class TestEdgeAttributes(unittest.TestCase):

    def test_single_edge_raw(self):
        graph = build_graph(["A", "B"], [make_pipe("A", "B", length=120.0, diameter=1.5)], "B")
        matrix = graph.edge_attr_matrix()
        self.assertEqual(matrix.shape, (1, N_EDGE_FEATURES))
        self.assertEqual(matrix[0, 0], 120.0)
        self.assertEqual(matrix[0, 2], 1.5)

    def test_zscored_columns(self):
        graph = demo_graph(23)
        matrix = graph.edge_attr_matrix(fit_edge_stats(graph))
        self.assertEqual(matrix.shape, (22, 9))
        varying = graph.edge_attr_matrix().std(axis=0) > 0
        np.testing.assert_allclose(matrix.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(matrix.std(axis=0)[varying], 1.0, atol=1e-12)

    def test_csv_round_trip_and_fingerprint(self):
        graph = demo_graph(8)
        with tempfile.TemporaryDirectory() as tmp:
            save_graph(graph, tmp)
            self.assertTrue((Path(tmp) / "edges.csv").exists())
            loaded = load_graph(tmp)
        self.assertEqual(loaded.nodes, graph.nodes)
        self.assertEqual(loaded.outlet, graph.outlet)
        self.assertEqual(loaded.fingerprint(), graph.fingerprint())

    def test_fingerprint_sees_attributes(self):
        a = chain_graph(["A", "B"], length=100.0)
        b = chain_graph(["A", "B"], length=101.0)
        self.assertNotEqual(a.fingerprint(), b.fingerprint())


if __name__ == "__main__":
    unittest.main()
