"""
Unit tests for checkpoint archives.
"""

import tempfile
import unittest
import zipfile
from pathlib import Path

import numpy as np

from src.checkpoint import Checkpoint, checkpoint_bytes, load_checkpoint, save_checkpoint
from src.config import HydroNetConfig, SimConfig, TrainConfig
from src.dataset import fit_edge_stats, fit_normalizer
from src.errors import CorruptCheckpoint, FingerprintMismatch
from src.hydronet import HydroNet
from src.synthetic_data import demo_graph, generate_dataset


def make_checkpoint(graph, seed=0):
    config = HydroNetConfig(hidden_channels=4, edge_embed_dim=3, seed=seed)
    model = HydroNet(config, graph)
    panel = generate_dataset(graph, SimConfig(duration=50, seed=seed))
    return Checkpoint(
        model_config=config,
        train_config=TrainConfig(learning_rate=3e-4, seed=seed),
        params=model.state_dict(),
        norm_stats=fit_normalizer(panel, "per_node"),
        edge_stats=fit_edge_stats(graph),
        graph_fingerprint=graph.fingerprint(),
        best_val_loss=0.123456789,
        epoch=7,
    )


class TestCheckpoint(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.graph = demo_graph(5)
        self.checkpoint = make_checkpoint(self.graph)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bitwise(self):
        path = save_checkpoint(self.checkpoint, self.dir / "ckpt" / "model.zip")
        loaded = load_checkpoint(path)
        self.assertEqual(list(loaded.params), list(self.checkpoint.params))
        for name, value in self.checkpoint.params.items():
            self.assertEqual(loaded.params[name].tobytes(), value.tobytes())
        self.assertEqual(loaded.model_config, self.checkpoint.model_config)
        self.assertEqual(loaded.train_config, self.checkpoint.train_config)
        np.testing.assert_array_equal(loaded.norm_stats.std, self.checkpoint.norm_stats.std)
        self.assertEqual(loaded.norm_stats.mode, "per_node")
        self.assertEqual((loaded.best_val_loss, loaded.epoch), (0.123456789, 7))

    def test_identical_checkpoints_identical_bytes(self):
        self.assertEqual(checkpoint_bytes(self.checkpoint), checkpoint_bytes(make_checkpoint(self.graph)))
        self.assertNotEqual(checkpoint_bytes(self.checkpoint),
                            checkpoint_bytes(make_checkpoint(self.graph, seed=1)))

    def test_restored_model_predicts_identically(self):
        path = save_checkpoint(self.checkpoint, self.dir / "model.zip")
        window = np.random.default_rng(0).normal(size=(12, 5, 2))
        original = self.checkpoint.to_model(self.graph).predict(window)
        restored = load_checkpoint(path).to_model(self.graph).predict(window)
        np.testing.assert_array_equal(original, restored)

    def test_fingerprint_mismatch(self):
        with self.assertRaises(FingerprintMismatch):
            self.checkpoint.to_model(demo_graph(6))

    def test_corrupt_archives(self):
        with self.assertRaises(CorruptCheckpoint):
            load_checkpoint(self.dir / "missing.zip")

        truncated = self.dir / "truncated.zip"
        truncated.write_bytes(checkpoint_bytes(self.checkpoint)[:100])
        with self.assertRaises(CorruptCheckpoint):
            load_checkpoint(truncated)

        short_param = self.dir / "short.zip"
        with zipfile.ZipFile(save_checkpoint(self.checkpoint, self.dir / "good.zip")) as source, \
                zipfile.ZipFile(short_param, "w") as target:
            for item in source.infolist():
                payload = source.read(item.filename)
                if item.filename == "params/000.bin":
                    payload = payload[:-8]
                target.writestr(item, payload)
        with self.assertRaises(CorruptCheckpoint):
            load_checkpoint(short_param)

        foreign = self.dir / "foreign.zip"
        with zipfile.ZipFile(foreign, "w") as archive:
            archive.writestr("header.json", '{"format": "something-else", "version": 1}')
        with self.assertRaises(CorruptCheckpoint):
            load_checkpoint(foreign)


if __name__ == "__main__":
    unittest.main()
