"""
Unit tests for descriptive statistics.
"""

import os
import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.analysis import acf, acf_frame, daily_profile, edge_corr_matrix, summary_table
from src.config import SimConfig
from src.errors import DataError, LagTooLarge, ZeroVariance
from src.graph import build_graph, chain_graph, make_pipe
from src.synthetic_data import demo_graph, generate_dataset


class TestACF(unittest.TestCase):

    def test_lag_zero_is_exactly_one(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            self.assertEqual(acf(rng.normal(size=50), 5)[0], 1.0)

    def test_alternating_series(self):
        series = np.tile([1.0, -1.0], 50)
        self.assertAlmostEqual(acf(series, 1)[1], -0.99, places=12)

    def test_bounded(self):
        r = acf(np.random.default_rng(1).normal(size=200).cumsum(), 150)
        self.assertTrue(np.all(np.abs(r) <= 1.0 + 1e-9))

    def test_errors(self):
        with self.assertRaises(ZeroVariance):
            acf(np.ones(10), 2)
        with self.assertRaises(LagTooLarge):
            acf(np.arange(5.0), 5)

    def test_daily_periodicity_on_simulated_panel(self):
        panel = generate_dataset(demo_graph(4), SimConfig(duration=432, noise_std=0.0, seed=1))
        table = acf_frame(panel, panel.node_order[-1], 144)
        self.assertGreater(table.loc[144, "flow"], 0.5)
        self.assertLess(table.loc[72, "flow"], 0.0)


class TestEdgeCorrelation(unittest.TestCase):

    def test_unit_diagonal_and_symmetry(self):
        corr = edge_corr_matrix(demo_graph(23))
        self.assertEqual(corr.shape, (9, 9))
        np.testing.assert_array_equal(np.diag(corr), np.ones(9))
        np.testing.assert_array_equal(corr, corr.T)

    def test_proportional_columns(self):
        edges = [
            make_pipe(up, "D", length=length, roughness=n, diameter=d, slope=s, max_flow=q,
                      max_velocity=v, max_over_full_flow=ff, max_over_full_depth=fd)
            for up, length, n, d, s, q, v, ff, fd in [
                ("A", 100.0, 0.012, 1.0, 0.020, 1.0, 2.0, 0.20, 0.40),
                ("B", 200.0, 0.013, 1.5, 0.010, 3.0, 2.5, 0.30, 0.55),
                ("C", 400.0, 0.015, 1.25, 0.005, 2.0, 3.5, 0.25, 0.45),
            ]
        ]
        corr = edge_corr_matrix(build_graph(["A", "B", "C", "D"], edges, "D"))
        # gis_length defaults to length
        self.assertAlmostEqual(corr[0, 4], 1.0, places=12)

    def test_constant_column_named(self):
        with self.assertRaises(ZeroVariance) as ctx:
            edge_corr_matrix(chain_graph(["A", "B", "C"]))
        self.assertIn("length", str(ctx.exception))

    def test_needs_two_edges(self):
        with self.assertRaises(DataError):
            edge_corr_matrix(chain_graph(["A", "B"]))


class TestProfiles(unittest.TestCase):

    def test_daily_profile_shape(self):
        panel = generate_dataset(demo_graph(4), SimConfig(duration=1008, seed=2))
        profile = daily_profile(panel, "flow")
        self.assertEqual(profile.shape, (144, 7))
        self.assertEqual(list(profile.columns)[0], "Monday")

    def test_summary_table(self):
        panel = generate_dataset(demo_graph(4), SimConfig(duration=100, seed=3))
        table = summary_table(panel)
        self.assertEqual(len(table), 8)
        self.assertTrue((table["min"] <= table["max"]).all())


@unittest.skipUnless(os.environ.get("HYDRONET_SLOW_TESTS") == "1", "set HYDRONET_SLOW_TESTS=1")
class TestAnalysisFigure(unittest.TestCase):

    def test_plot_written(self):
        from src.analysis import plot_analysis

        graph = demo_graph(6)
        panel = generate_dataset(graph, SimConfig(duration=432, seed=4))
        with tempfile.TemporaryDirectory() as tmp:
            path = plot_analysis(panel, graph, Path(tmp) / "analysis.png")
            self.assertGreater(Path(path).stat().st_size, 0)


if __name__ == "__main__":
    unittest.main()
