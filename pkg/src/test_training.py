"""
Unit tests for the optimizer and the training loop.
"""

import os
import unittest
from unittest import mock

import numpy as np

from src.checkpoint import checkpoint_bytes
from src.config import HydroNetConfig, SimConfig, TrainConfig, WindowSpec
from src.dataset import WindowSet, apply, chronological_split, fit_normalizer, make_windows
from src.errors import EmptyDataset, NonFiniteGradient, ShapeMismatch
from src.optimizer import AdamOptimizer, AdamState, adam_step
from src.hydronet import HydroNet
from src.synthetic_data import demo_graph, generate_dataset
from src.tensor import Tape, Tensor, backward
from src.training import HISTORY_COLUMNS, loss, train, validation_loss


def tiny_problem(duration=300):
    """Normalized windows on a 4-node network with an 8-step lookback."""
    graph = demo_graph(4)
    panel = generate_dataset(graph, SimConfig(duration=duration, seed=0))
    spec = WindowSpec(lookback=8, horizon=4)
    train_panel, val_panel, _ = chronological_split(panel, window=spec)
    stats = fit_normalizer(train_panel)
    return (graph, make_windows(apply(train_panel, stats), spec),
            make_windows(apply(val_panel, stats), spec), stats)


def tiny_config(seed=0):
    return HydroNetConfig(lookback=8, horizon=4, hidden_channels=4, edge_embed_dim=2,
                          temporal_kernel=2, seed=seed)


class TestAdam(unittest.TestCase):

    def test_first_step_moves_by_learning_rate(self):
        params = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.array([0.5, -4.0])}
        updated, state = adam_step(params, grads, None, TrainConfig(learning_rate=0.1))
        np.testing.assert_allclose(updated["w"], [0.9, -1.9], rtol=0, atol=1e-7)
        self.assertEqual(state.step, 1)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_missing_gradient_leaves_parameter(self):
        params = {"w": np.ones(3), "b": np.zeros(2)}
        updated, _ = adam_step(params, {"w": np.ones(3)}, None, TrainConfig())
        np.testing.assert_array_equal(updated["b"], np.zeros(2))

    def test_zero_gradient_decays_moments_only(self):
        config = TrainConfig(learning_rate=0.1)
        params = {"w": np.array([1.0, -2.0])}
        params, state = adam_step(params, {"w": np.array([0.5, -4.0])}, None, config)
        held, decayed = adam_step(params, {"w": np.zeros(2)}, state, config)
        np.testing.assert_array_equal(held["w"], params["w"])
        np.testing.assert_allclose(decayed.m["w"], config.beta1 * state.m["w"], rtol=1e-15)
        np.testing.assert_allclose(decayed.v["w"], config.beta2 * state.v["w"], rtol=1e-15)
        self.assertEqual(decayed.step, 2)

    def test_errors(self):
        params = {"w": np.ones(2)}
        with self.assertRaises(NonFiniteGradient):
            adam_step(params, {"w": np.array([np.nan, 1.0])}, None, TrainConfig())
        with self.assertRaises(ShapeMismatch):
            adam_step(params, {"w": np.ones(3)}, AdamState.zeros_like(params), TrainConfig())

    def test_optimizer_updates_tensors_in_place(self):
        w = Tensor(np.array([3.0]), requires_grad=True)
        optimizer = AdamOptimizer({"w": w}, TrainConfig(learning_rate=0.5))
        for _ in range(200):
            optimizer.zero_grad()
            with Tape():
                backward(loss(w, np.array([1.0]), "mse"))
            optimizer.step()
        self.assertLess(abs(w.data[0] - 1.0), 0.05)


class TestLoss(unittest.TestCase):

    def test_values(self):
        pred, target = np.array([1.0, 2.0, 4.0]), np.array([1.0, 1.0, 1.0])
        self.assertAlmostEqual(loss(pred, target, "mae").item(), 4.0 / 3.0)
        self.assertAlmostEqual(loss(pred, target, "mse").item(), 10.0 / 3.0)
        with self.assertRaises(ShapeMismatch):
            loss(np.ones(3), np.ones(2))
        with self.assertRaises(ValueError):
            loss(pred, target, "huber")


class TestTrain(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.graph, cls.train_windows, cls.val_windows, cls.stats = tiny_problem()

    def fit(self, **overrides):
        settings = dict(learning_rate=1e-2, max_epochs=3, patience=3, progress=False, seed=0)
        settings.update(overrides)
        return train(self.graph, self.train_windows, self.val_windows, tiny_config(),
                     TrainConfig(**settings), self.stats)

    def test_history_and_best_epoch(self):
        checkpoint, history = self.fit()
        self.assertEqual(list(history.columns), HISTORY_COLUMNS)
        self.assertEqual(len(history), 3)
        self.assertEqual(checkpoint.best_val_loss, history["val_loss"].min())
        self.assertEqual(checkpoint.epoch, int(history["val_loss"].idxmin()) + 1)
        self.assertLess(history["train_loss"].iloc[-1], history["train_loss"].iloc[0])

        model = checkpoint.to_model(self.graph)
        self.assertAlmostEqual(validation_loss(model, self.val_windows), checkpoint.best_val_loss, places=12)

    def test_early_stopping(self):
        _, history = self.fit(learning_rate=1e-12, max_epochs=20, patience=1)
        self.assertEqual(len(history), 2)

    def test_deterministic(self):
        first, _ = self.fit(max_epochs=2, patience=2)
        second, _ = self.fit(max_epochs=2, patience=2)
        self.assertEqual(checkpoint_bytes(first), checkpoint_bytes(second))

    def test_fixed_batch_loss_falls_over_first_steps(self):
        inputs, targets = self.train_windows.inputs[:32], self.train_windows.targets[:32]
        failures = 0
        for seed in range(5):
            model = HydroNet(tiny_config(seed), self.graph)
            optimizer = AdamOptimizer(model.params, TrainConfig(learning_rate=1e-3))
            losses = []
            for _ in range(6):
                optimizer.zero_grad()
                with Tape():
                    batch_loss = loss(model(inputs), targets, "mse")
                    backward(batch_loss)
                losses.append(batch_loss.item())
                optimizer.step()
            failures += not np.all(np.diff(losses) < 0)
        self.assertLessEqual(failures, 1)

    def test_checkpoint_keeps_lowest_validation_params(self):
        scripted = iter([1.0, 0.6, 0.8, 0.7, 0.9, 0.5])
        seen = []

        def scripted_loss(model, windows, kind="mae", batch_size=32):
            seen.append(model.state_dict())
            return next(scripted)

        with mock.patch("src.training.validation_loss", side_effect=scripted_loss):
            checkpoint, history = self.fit(max_epochs=10, patience=3)

        # improvement at epoch 2, then three stale epochs
        self.assertEqual(len(history), 5)
        self.assertEqual(checkpoint.epoch, 2)
        self.assertEqual(checkpoint.best_val_loss, 0.6)
        self.assertEqual(list(history["best"]), [True, True, False, False, False])
        for name, value in seen[1].items():
            np.testing.assert_array_equal(checkpoint.params[name], value)
        self.assertFalse(np.array_equal(checkpoint.params["head.out_w"], seen[-1]["head.out_w"]))

    def test_empty_windows(self):
        empty = self.val_windows.select(slice(0, 0))
        with self.assertRaises(EmptyDataset):
            train(self.graph, empty, self.val_windows, tiny_config(), TrainConfig(progress=False), self.stats)
        with self.assertRaises(EmptyDataset):
            train(self.graph, self.train_windows, empty, tiny_config(), TrainConfig(progress=False), self.stats)


def persistence_windows(graph, steps=640, lookback=8, horizon=4):
    """Smooth per-node oscillations whose targets repeat the last input step."""
    t = np.arange(steps)[:, None]
    phase = 0.7 * np.arange(graph.n_nodes)[None, :]
    series = np.stack([np.sin(2 * np.pi * t / 37 + phase), np.cos(2 * np.pi * t / 37 + phase)], axis=-1)
    starts = np.arange(steps - lookback + 1)
    inputs = np.stack([series[s:s + lookback] for s in starts])
    targets = np.repeat(inputs[:, -1:], horizon, axis=1)
    return WindowSet(inputs=inputs, targets=targets, starts=starts)


@unittest.skipUnless(os.environ.get("HYDRONET_SLOW_TESTS") == "1", "set HYDRONET_SLOW_TESTS=1")
class TestLearnability(unittest.TestCase):

    def test_learns_persistence(self):
        graph = demo_graph(4)
        windows = persistence_windows(graph)
        stats = fit_normalizer(generate_dataset(graph, SimConfig(duration=60, seed=0)))
        model_config = HydroNetConfig(lookback=8, horizon=4, hidden_channels=16, edge_embed_dim=4,
                                      temporal_kernel=2, seed=0)
        train_config = TrainConfig(learning_rate=5e-3, loss="mse", batch_size=32, max_epochs=50,
                                   patience=50, progress=False, seed=0)
        checkpoint, history = train(graph, windows, windows, model_config, train_config, stats)
        self.assertLessEqual(len(history), 50)
        mae = validation_loss(checkpoint.to_model(graph), windows, "mae")
        self.assertLess(mae, 0.05)


if __name__ == "__main__":
    unittest.main()
