"""
Unit tests for panel I/O, splitting, normalization and windowing.
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.config import SplitSpec, WindowSpec
from src.dataset import (
    NormStats,
    TimeSeriesPanel,
    apply,
    chronological_split,
    fit_edge_stats,
    fit_normalizer,
    invert,
    load_panel,
    make_windows,
    save_panel,
    save_provenance,
    split_sizes,
)
from src.errors import DataError, EmptyFile, MissingNodeColumn, NaNValue, NonUniformStride, TooShort, ZeroVariance
from src.graph import chain_graph


def random_panel(n_steps=100, nodes=("A", "B", "C"), seed=0):
    rng = np.random.default_rng(seed)
    timestamps = 1696118400 + 600 * np.arange(n_steps)
    return TimeSeriesPanel(timestamps, rng.uniform(0.1, 2.0, size=(n_steps, len(nodes), 2)), nodes)


class TestLoadPanel(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        path = self.dir / "panel.csv"
        path.write_text(text)
        return path

    def test_single_node(self):
        path = self.write("timestamp,N1_depth,N1_flow\n0,0.1,0.2\n600,0.1,0.2\n1200,0.1,0.2\n")
        panel = load_panel(path)
        self.assertEqual(panel.values.shape, (3, 1, 2))
        np.testing.assert_array_equal(panel.values[:, 0, 0], [0.1, 0.1, 0.1])
        self.assertEqual(panel.stride, 600)

    def test_rows_sorted_and_aligned_to_graph(self):
        graph = chain_graph(["A", "B"])
        path = self.write("timestamp,B_depth,B_flow,A_depth,A_flow\n600,2,3,0,1\n0,6,7,4,5\n")
        panel = load_panel(path, graph)
        self.assertEqual(panel.node_order, ("A", "B"))
        np.testing.assert_array_equal(panel.timestamps, [0, 600])
        np.testing.assert_array_equal(panel.values[0], [[4, 5], [6, 7]])

    def test_errors(self):
        with self.assertRaises(NonUniformStride):
            load_panel(self.write("timestamp,N1_depth,N1_flow\n0,1,1\n600,1,1\n1800,1,1\n"))
        with self.assertRaises(NaNValue) as ctx:
            load_panel(self.write("timestamp,N1_depth,N1_flow\n0,1,1\n600,,1\n"))
        self.assertIn("N1_depth", str(ctx.exception))
        with self.assertRaises(MissingNodeColumn):
            load_panel(self.write("timestamp,A_depth,A_flow\n0,1,1\n"), chain_graph(["A", "B"]))
        with self.assertRaises(EmptyFile):
            load_panel(self.write(""))
        with self.assertRaises(EmptyFile):
            load_panel(self.write("timestamp,N1_depth,N1_flow\n"))

    def test_save_load_round_trip_with_provenance(self):
        panel = random_panel(20)
        save_panel(panel, self.dir / "p.csv")
        save_provenance({"A": "sensor", "B": "simulated"}, self.dir / "prov.csv")
        loaded = load_panel(self.dir / "p.csv", provenance=self.dir / "prov.csv")
        np.testing.assert_array_equal(loaded.values, panel.values)
        np.testing.assert_array_equal(loaded.timestamps, panel.timestamps)
        self.assertEqual(loaded.provenance, {"A": "sensor", "B": "simulated"})

    def test_provenance_errors(self):
        save_panel(random_panel(20), self.dir / "p.csv")
        with self.assertRaises(DataError):
            load_panel(self.dir / "p.csv", provenance=self.dir / "absent.csv")
        (self.dir / "empty.csv").write_text("")
        with self.assertRaises(EmptyFile):
            load_panel(self.dir / "p.csv", provenance=self.dir / "empty.csv")
        (self.dir / "bad.csv").write_text("node_id,source\nA,satellite\n")
        with self.assertRaises(DataError):
            load_panel(self.dir / "p.csv", provenance=self.dir / "bad.csv")


class TestSplit(unittest.TestCase):

    def test_sizes(self):
        self.assertEqual(split_sizes(17706, SplitSpec()), (12394, 1770, 3542))
        self.assertEqual(split_sizes(10, SplitSpec()), (7, 1, 2))

    def test_segments_concatenate_back(self):
        panel = random_panel(100)
        parts = chronological_split(panel, SplitSpec())
        self.assertEqual([p.n_steps for p in parts], [70, 10, 20])
        np.testing.assert_array_equal(np.concatenate([p.values for p in parts]), panel.values)
        self.assertLess(parts[0].timestamps[-1], parts[1].timestamps[0])

    def test_too_short(self):
        with self.assertRaises(TooShort):
            chronological_split(random_panel(20), SplitSpec(), WindowSpec(lookback=12, horizon=12))


class TestNormalizer(unittest.TestCase):

    def test_population_moments(self):
        values = np.array([[[1.0, 10.0]], [[3.0, 30.0]]])
        panel = TimeSeriesPanel([0, 600], values, ("A",))
        stats = fit_normalizer(panel)
        np.testing.assert_allclose(stats.mean, [2.0, 20.0])
        np.testing.assert_allclose(stats.std, [1.0, 10.0])
        np.testing.assert_allclose(apply(panel, stats).values[:, 0, 0], [-1.0, 1.0])

    def test_round_trip(self):
        panel = random_panel(50)
        for mode in ("global", "per_node"):
            stats = fit_normalizer(panel, mode)
            restored = invert(apply(panel, stats), stats)
            self.assertLess(np.max(np.abs(restored.values - panel.values)), 1e-12)

    def test_constant_channel(self):
        panel = random_panel(10)
        values = panel.values.copy()
        values[..., 0] = 0.3
        with self.assertRaises(ZeroVariance):
            fit_normalizer(panel.with_values(values))

    def test_serialization(self):
        stats = fit_normalizer(random_panel(30), "per_node")
        restored = NormStats.from_dict(stats.to_dict())
        np.testing.assert_array_equal(restored.mean, stats.mean)
        self.assertEqual(restored.mode, "per_node")

    def test_edge_stats_constant_columns(self):
        stats = fit_edge_stats(chain_graph(["A", "B", "C"]))
        np.testing.assert_array_equal(stats.std, np.ones(9))


class TestWindows(unittest.TestCase):

    def test_counts(self):
        spec = WindowSpec(lookback=12, horizon=12)
        self.assertEqual(len(make_windows(random_panel(100), spec)), 77)
        self.assertEqual(len(make_windows(random_panel(24), spec)), 1)
        with self.assertRaises(TooShort):
            make_windows(random_panel(23), spec)

    def test_count_exhaustive(self):
        spec = WindowSpec(lookback=12, horizon=12)
        values = np.zeros((74, 2, 2))
        for t in range(24, 75):
            self.assertEqual(len(make_windows(values[:t], spec)), t - 23)

    def test_window_contents(self):
        panel = random_panel(30)
        windows = make_windows(panel, WindowSpec(lookback=4, horizon=3))
        x, y = windows[5]
        np.testing.assert_array_equal(x, panel.values[5:9])
        np.testing.assert_array_equal(y, panel.values[9:12])
        self.assertEqual((windows.lookback, windows.horizon), (4, 3))
        self.assertEqual(len(list(windows)), len(windows))


if __name__ == "__main__":
    unittest.main()
