import json
import os
import tempfile
import unittest

from base.run_config import GeneratorSpec, ModelConfig, RunConfig
from super.configurator import DefaultConfigurator


class TestRunConfig(unittest.TestCase):
    def setUp(self) -> None:
        self.config = RunConfig()

    def test_defaults(self) -> None:
        self.assertEqual(self.config.num_classes, 3)
        self.assertEqual(self.config.num_prototypes, 40)
        self.assertEqual(self.config.loss.lambda_clst, 0.8)
        self.assertEqual(self.config.loss.lambda_abs, 0.3)
        self.assertEqual(self.config.train.push_period, 5)
        self.assertEqual(self.config.input_length, 32)

    def test_round_trip_and_hash(self) -> None:
        copy = RunConfig.from_dict(self.config.to_dict())
        self.assertEqual(copy.config_hash(), self.config.config_hash())
        copy.loss.lambda_sep = 0.0
        self.assertNotEqual(copy.config_hash(), self.config.config_hash())

    def test_partial_document(self) -> None:
        config = RunConfig.from_dict({"model": {"use_uncertainty": False}})
        self.assertEqual(config.num_prototypes, 30)
        self.assertEqual(config.data.clip_length, 32)

    def test_rejects_unknown_keys(self) -> None:
        with self.assertRaisesRegex(ValueError, "model.bogus"):
            RunConfig.from_dict({"model": {"bogus": 1}})
        with self.assertRaisesRegex(ValueError, "optimizer"):
            RunConfig.from_dict({"optimizer": {}})

    def test_rejects_invalid_values(self) -> None:
        with self.assertRaises(ValueError):
            ModelConfig(output_normalization="both")
        with self.assertRaises(ValueError):
            GeneratorSpec(split_ratios=[0.5, 0.3, 0.1])
        with self.assertRaises(ValueError):
            GeneratorSpec(amplitude_ranges=[[60.0, 80.0], [50.0, 65.0], [5.0, 25.0]])
        with self.assertRaises(ValueError):
            RunConfig.from_dict({"data": {"image_size": [60, 64]}})
        with self.assertRaises(ValueError):
            RunConfig.from_dict({"loss": {"lambda_sep": -0.1}})

    def test_save_and_load(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "config.json")
            self.config.save(path)
            self.assertEqual(RunConfig.load(path).config_hash(), self.config.config_hash())
            with open(path, "w", encoding="utf-8") as f:
                f.write("{not json")
            with self.assertRaises(ValueError):
                RunConfig.load(path)
            with self.assertRaises(FileNotFoundError):
                RunConfig.load(os.path.join(tmp, "missing.json"))


class TestConfigurator(unittest.TestCase):
    def setUp(self) -> None:
        self.configurator = DefaultConfigurator()
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "run.json")
        with open(self.path, "w", encoding="utf-8") as f:
            json.dump({"train": {"epochs": 3}}, f)

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def test_parse_value(self) -> None:
        self.assertEqual(self.configurator.parse_value("0.5"), 0.5)
        self.assertEqual(self.configurator.parse_value("false"), False)
        self.assertEqual(self.configurator.parse_value("[32, 32]"), [32, 32])
        self.assertEqual(self.configurator.parse_value("separate"), "separate")

    def test_overrides(self) -> None:
        config = self.configurator.apply_overrides(RunConfig(), ["loss.lambda_abs=0.5", "model.output_normalization=separate"])
        self.assertEqual(config.loss.lambda_abs, 0.5)
        self.assertEqual(config.model.output_normalization, "separate")

    def test_unknown_override_key(self) -> None:
        with self.assertRaisesRegex(ValueError, "loss.lambda_bogus"):
            self.configurator.apply_overrides(RunConfig(), ["loss.lambda_bogus=1"])
        with self.assertRaisesRegex(ValueError, "epochs"):
            self.configurator.apply_overrides(RunConfig(), ["epochs=1"])
        with self.assertRaises(ValueError):
            self.configurator.apply_overrides(RunConfig(), ["train.epochs"])

    def test_resolve(self) -> None:
        config = self.configurator.resolve({"config_path": self.path, "overrides": ["train.seed=4"],
                                            "deterministic": True})
        self.assertEqual(config.train.epochs, 3)
        self.assertEqual(config.train.seed, 4)
        self.assertTrue(config.train.deterministic)

    def test_execute(self) -> None:
        config = self.configurator.execute(RunConfig(), {"type": "overrides", "overrides": ["eval.split=val"]})
        self.assertEqual(config.eval.split, "val")
        with self.assertRaises(ValueError):
            self.configurator.execute(RunConfig(), {"type": "unknown"})


if __name__ == "__main__":
    unittest.main()
