"""
Unit tests for run configuration.
"""

import tempfile
import unittest
import zlib
from pathlib import Path

from pydantic import ValidationError

from src.config import (
    HydroNetConfig,
    RunConfig,
    SplitSpec,
    TrainConfig,
    derive_seed,
    load_config,
    save_config,
)
from src.errors import ConfigError, exit_code_for


class TestSeeds(unittest.TestCase):

    def test_derive_seed(self):
        self.assertEqual(derive_seed(0, "sim"), zlib.crc32(b"sim"))
        self.assertNotEqual(derive_seed(1, "sim"), derive_seed(1, "init"))

    def test_effective_sections(self):
        config = RunConfig(seed=5)
        self.assertEqual(config.effective_sim().seed, derive_seed(5, "sim"))
        self.assertEqual(config.effective_model().seed, derive_seed(5, "init"))
        self.assertEqual(config.effective_train().seed, derive_seed(5, "shuffle"))
        self.assertIsNone(config.sim.seed)

        pinned = RunConfig(seed=5, model=HydroNetConfig(seed=42))
        self.assertEqual(pinned.effective_model().seed, 42)


class TestValidation(unittest.TestCase):

    def test_split_must_sum_to_one(self):
        with self.assertRaises(ValidationError):
            SplitSpec(train=0.7, val=0.2, test=0.2)

    def test_patience_bounded_by_epochs(self):
        with self.assertRaises(ValidationError):
            TrainConfig(max_epochs=5, patience=10)

    def test_window_matches_model(self):
        with self.assertRaises(ValidationError) as ctx:
            RunConfig(model=HydroNetConfig(lookback=24))
        self.assertEqual(exit_code_for(ctx.exception), 2)

    def test_unknown_keys_rejected(self):
        with self.assertRaises(ValidationError):
            RunConfig.model_validate({"sim": {"durration": 10}})

    def test_file_system_errors_are_data_errors(self):
        self.assertEqual(exit_code_for(FileNotFoundError("x")), 3)
        self.assertEqual(exit_code_for(RuntimeError("x")), 1)

    def test_assignment_validated(self):
        config = RunConfig()
        with self.assertRaises(ValidationError):
            config.sim.duration = 0


class TestFiles(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        config = RunConfig(seed=11, train=TrainConfig(learning_rate=5e-4, loss="mse"))
        save_config(config, self.dir / "run.yaml")
        self.assertEqual(load_config(self.dir / "run.yaml"), config)

    def test_defaults_and_errors(self):
        self.assertEqual(load_config(None), RunConfig())
        with self.assertRaises(ConfigError):
            load_config(self.dir / "absent.yaml")
        (self.dir / "v2.yaml").write_text("version: 2\n")
        with self.assertRaises(ConfigError):
            load_config(self.dir / "v2.yaml")
        (self.dir / "list.yaml").write_text("- 1\n- 2\n")
        with self.assertRaises(ConfigError):
            load_config(self.dir / "list.yaml")
        (self.dir / "v1.yaml").write_text("version: 1\n")
        self.assertEqual(load_config(self.dir / "v1.yaml"), RunConfig())

    def test_version_is_mandatory(self):
        (self.dir / "unversioned.yaml").write_text("seed: 4\n")
        with self.assertRaises(ConfigError) as ctx:
            load_config(self.dir / "unversioned.yaml")
        self.assertIn("version", str(ctx.exception))
        (self.dir / "empty.yaml").write_text("")
        with self.assertRaises(ConfigError):
            load_config(self.dir / "empty.yaml")


if __name__ == "__main__":
    unittest.main()
