import io
import json
import os
import tempfile
import unittest
from unittest import mock

import pandas as pd

from main import run
from super.manipulator import ABLATIONS, DefaultManipulator, ablation_config
from tests.helpers import tiny_config


class TestAblationConfig(unittest.TestCase):
    def setUp(self) -> None:
        self.config = tiny_config("/tmp/unused")

    def test_single_switch_per_variant(self) -> None:
        self.assertEqual(ablation_config(self.config, "full").config_hash(), self.config.config_hash())
        self.assertFalse(ablation_config(self.config, "no_uncertainty").model.use_uncertainty)
        no_cs = ablation_config(self.config, "no_cluster_sep")
        self.assertEqual((no_cs.loss.lambda_clst, no_cs.loss.lambda_sep), (0.0, 0.0))
        self.assertEqual(no_cs.loss.lambda_orth, self.config.loss.lambda_orth)
        self.assertFalse(ablation_config(self.config, "no_push").train.push_enabled)
        # the source config is untouched
        self.assertTrue(self.config.model.use_uncertainty)

    def test_repeat_shifts_seed(self) -> None:
        self.assertEqual(ablation_config(self.config, "full", 2).train.seed, self.config.train.seed + 2)
        with self.assertRaises(ValueError):
            ablation_config(self.config, "no_encoder")


class TestCommands(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.config = tiny_config(self.tmp.name, train={"epochs": 1}, explain={"max_clips": 1})
        self.config_path = os.path.join(self.tmp.name, "config.json")
        self.config.save(self.config_path)
        self.runs = self.config.train.runs_root

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def _run(self, *argv: str):
        with mock.patch("sys.stdout", new_callable=io.StringIO) as out, \
                mock.patch("sys.stderr", new_callable=io.StringIO) as err:
            code = run(list(argv))
        return code, out.getvalue(), err.getvalue()

    def test_unknown_override_key(self) -> None:
        attributes = {"config_path": self.config_path, "overrides": ["model.bogus=1"]}
        with self.assertRaisesRegex(ValueError, "model.bogus"):
            DefaultManipulator().process_request("train", attributes)
        code, out, err = self._run("train", "--config", self.config_path, "--set", "model.bogus=1")
        self.assertEqual(code, 1)
        self.assertEqual(out, "")
        error = json.loads(err.strip())
        self.assertEqual(error["error"], "ValueError")
        self.assertIn("model.bogus", error["message"])

    def test_unsupported_command(self) -> None:
        with self.assertRaises(ValueError):
            DefaultManipulator().process_request("deploy", {})

    def test_oracle_eval(self) -> None:
        code, out, _ = self._run("generate-data", "--config", self.config_path)
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(out)["clips"], 24)
        code, out, _ = self._run("eval", "--config", self.config_path, "--oracle", "--split", "train",
                                 "--run-name", "oracle", "--export-csv")
        self.assertEqual(code, 0)
        result = json.loads(out)
        self.assertEqual(result["clip_bacc"], 1.0)
        self.assertEqual(result["config_hash"], self.config.config_hash())
        with open(os.path.join(self.runs, "oracle", "metrics_train.json"), "r", encoding="utf-8") as f:
            metrics = json.load(f)
        self.assertEqual(metrics["clip"]["bacc"], 1.0)
        self.assertEqual(metrics["study"]["bacc"], 1.0)
        self.assertGreaterEqual(metrics["study"]["bacc"], metrics["clip"]["bacc"])
        self.assertEqual(metrics["clip"]["bmae"], 0.0)
        self.assertEqual(metrics["header"]["predictor"], "oracle")
        predictions = pd.read_csv(result["predictions"])
        self.assertEqual(len(predictions), 20)
        self.assertTrue((predictions["label"] == predictions["predicted"]).all())

    def test_oracle_excludes_checkpoint(self) -> None:
        code, _, err = self._run("eval", "--config", self.config_path, "--oracle", "--checkpoint", "x.pt")
        self.assertEqual(code, 1)
        self.assertIn("mutually exclusive", json.loads(err)["message"])

    def test_metrics_file_is_reproducible(self) -> None:
        manipulator = DefaultManipulator()
        manipulator.process_request("generate-data", {"config_path": self.config_path})
        documents = []
        for name in ("repro_a", "repro_b"):
            attributes = {"config_path": self.config_path, "run_name": name, "deterministic": True}
            manipulator.process_request("train", attributes)
            result = manipulator.process_request("eval", {**attributes, "split": "train"})
            with open(result["metrics"], "rb") as f:
                documents.append(f.read())
        self.assertEqual(documents[0], documents[1])

    def test_missing_checkpoint(self) -> None:
        self.assertEqual(self._run("generate-data", "--config", self.config_path)[0], 0)
        code, _, err = self._run("eval", "--config", self.config_path, "--run-name", "never_trained")
        self.assertEqual(code, 1)
        self.assertEqual(json.loads(err)["error"], "FileNotFoundError")

    def test_train_push_eval_explain(self) -> None:
        self.assertEqual(self._run("generate-data", "--config", self.config_path)[0], 0)
        code, out, _ = self._run("train", "--config", self.config_path, "--run-name", "pipeline")
        self.assertEqual(code, 0)
        self.assertTrue(os.path.exists(json.loads(out)["final_checkpoint"]))

        code, out, _ = self._run("push", "--config", self.config_path, "--run-name", "pipeline")
        self.assertEqual(code, 0)
        pushed = json.loads(out)["checkpoint"]
        self.assertTrue(os.path.exists(pushed))
        # the final checkpoint is already pushed, so a second push barely moves anything
        self.assertLess(json.loads(out)["total_distance"], 1e-3)

        code, out, _ = self._run("eval", "--config", self.config_path, "--run-name", "pipeline", "--split", "train",
                                 "--checkpoint", pushed)
        self.assertEqual(code, 0)
        with open(json.loads(out)["metrics"], "r", encoding="utf-8") as f:
            metrics = json.load(f)
        self.assertEqual(metrics["header"]["predictor"], "model")
        self.assertIsNotNone(metrics["explanations"])

        out_dir = os.path.join(self.tmp.name, "explain")
        code, out, _ = self._run("explain", "--config", self.config_path, "--run-name", "pipeline",
                                 "--split", "train", "--out-dir", out_dir)
        self.assertEqual(code, 0)
        summary = json.loads(out)
        self.assertEqual(summary["reports"], 1)
        self.assertTrue(os.path.exists(os.path.join(out_dir, "index.html")))

    def test_ablate(self) -> None:
        manipulator = DefaultManipulator()
        attributes = {"config_path": self.config_path, "run_name": "abl"}
        manipulator.process_request("generate-data", attributes)
        result = manipulator.process_request("ablate", attributes)
        self.assertEqual(result["rows"], len(ABLATIONS))
        summary = pd.read_csv(result["csv"])
        self.assertEqual(list(summary["ablation"]), list(ABLATIONS))
        self.assertIn("bacc_mean", summary.columns)
        self.assertTrue(os.path.exists(result["chart"]))
        with open(result["json"], "r", encoding="utf-8") as f:
            document = json.load(f)
        self.assertEqual(len(document["runs"]), len(ABLATIONS) * self.config.ablation.repeats)
        for row in document["runs"]:
            # the smallest covering set holds at least one prototype and at most all of them
            self.assertGreater(row["sparsity"], 0.0)
            self.assertLessEqual(row["sparsity"], 1.0)
            self.assertGreater(row["diversity"], 0.0)
            self.assertLessEqual(row["diversity"], 1.0)
        for name in ABLATIONS:
            self.assertTrue(os.path.isdir(os.path.join(self.runs, "abl", f"ablate_{name}_r0")))


if __name__ == "__main__":
    unittest.main()
