"""
Unit tests for Manning pipe hydraulics.
"""

import unittest

import numpy as np

from src.errors import FlowExceedsCapacity, NonPositiveInput
from src.graph import make_pipe
from src.hydraulics import CircularPipe, edge_capacity, manning_full_flow, normal_depth, partial_flow


def grid_depth(pipe: CircularPipe, flow: float, samples: int = 100_000) -> float:
    """Brute-force inversion on the rising branch of the rating curve."""
    depths = np.linspace(0.0, pipe.diameter, samples)
    flows = pipe.flow(depths)
    rising = flows[: int(np.argmax(flows)) + 1]
    return float(depths[int(np.searchsorted(rising, flow))])


class TestFullFlow(unittest.TestCase):

    def test_reference_value(self):
        self.assertAlmostEqual(manning_full_flow(1.0, 0.01, 0.013), 3.5724, delta=1e-3)

    def test_slope_scaling(self):
        ratio = manning_full_flow(1.0, 0.04, 0.013) / manning_full_flow(1.0, 0.01, 0.013)
        self.assertAlmostEqual(ratio, 2.0, places=12)

    def test_non_positive(self):
        with self.assertRaises(NonPositiveInput):
            manning_full_flow(0.0, 0.01, 0.013)
        with self.assertRaises(NonPositiveInput):
            manning_full_flow(1.0, -0.01, 0.013)

    def test_partial_flow_at_full_depth(self):
        edge = make_pipe("A", "B")
        self.assertAlmostEqual(partial_flow(edge.diameter, edge), edge_capacity(edge), places=10)
        self.assertEqual(partial_flow(0.0, edge), 0.0)


class TestNormalDepth(unittest.TestCase):

    def setUp(self):
        self.edge = make_pipe("A", "B", diameter=1.0, slope=0.01, roughness=0.013)
        self.capacity = edge_capacity(self.edge)

    def test_boundaries(self):
        self.assertEqual(normal_depth(0.0, self.edge), 0.0)
        self.assertAlmostEqual(normal_depth(self.capacity, self.edge), 1.0, places=9)

    def test_half_capacity_matches_grid(self):
        pipe = CircularPipe.from_edge(self.edge)
        flow = 0.5 * self.capacity
        depth = normal_depth(flow, self.edge)
        self.assertLess(abs(depth - grid_depth(pipe, flow)), 1e-4)
        self.assertLess(abs(pipe.flow(depth) - flow), 1e-9 * max(self.capacity, 1.0))

    def test_random_pipes_match_grid(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            pipe = CircularPipe(rng.uniform(0.5, 4.0), rng.uniform(0.001, 0.05), rng.uniform(0.010, 0.016))
            flow = rng.uniform(0.01, 0.99) * pipe.full_flow
            self.assertLess(abs(pipe.depth(flow) - grid_depth(pipe, flow)), 1e-4)

    def test_monotone_in_flow(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            pipe = CircularPipe(rng.uniform(0.5, 4.0), rng.uniform(0.001, 0.05), rng.uniform(0.010, 0.016))
            flows = np.sort(rng.uniform(0.0, 0.999, size=(50, 2)) * pipe.full_flow, axis=1)
            flows = flows[flows[:, 0] < flows[:, 1]]
            depths = pipe.depths(flows)
            self.assertTrue(np.all(depths[:, 0] < depths[:, 1]))

    def test_vectorised_matches_scalar(self):
        pipe = CircularPipe.from_edge(self.edge)
        flows = np.linspace(0.0, self.capacity, 17)
        expected = [pipe.depth(q) for q in flows]
        np.testing.assert_allclose(pipe.depths(flows), expected, atol=1e-10)

    def test_over_capacity(self):
        with self.assertRaises(FlowExceedsCapacity):
            normal_depth(1.1 * self.capacity, self.edge)
        self.assertEqual(normal_depth(1.1 * self.capacity, self.edge, allow_surcharge=True), 1.0)
        with self.assertRaises(FlowExceedsCapacity):
            CircularPipe.from_edge(self.edge).depths(np.array([0.5, 2.0 * self.capacity]))

    def test_negative_flow(self):
        with self.assertRaises(NonPositiveInput):
            normal_depth(-0.1, self.edge)


if __name__ == "__main__":
    unittest.main()
