# super/manipulator.py
import json
import os
from abc import ABC
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from base.clips import Manifest
from base.outputs import PredictionRecord
from base.run_config import RunConfig
from nets.protoasnet import ProtoASNet
from super.calculator import Calculator, DefaultCalculator
from super.configurator import Configurator, DefaultConfigurator
from super.inspector import DefaultInspector, Inspector
from super.pusher import DefaultPusher, Pusher
from super.synthesizer import DefaultSynthesizer, Synthesizer
from super.trainer import DefaultTrainer, Trainer, load_checkpoint, save_checkpoint
from utils.manifestmanager import ClipDataset, ManifestManager
from utils.logging_setup import logger

ABLATIONS = ("full", "no_uncertainty", "no_cluster_sep", "no_push")
ABLATION_METRICS = ("bacc", "study_bacc", "bmae", "auroc", "sparsity", "diversity")


def ablation_config(config: RunConfig, name: str, repeat: int = 0) -> RunConfig:
    """Copy of config with exactly one mechanism switched off and the seed shifted by the repeat index"""
    if name not in ABLATIONS:
        logger.error(f"Unknown ablation '{name}'")
        raise ValueError(f"Unknown ablation '{name}', expected one of {ABLATIONS}")
    variant = config.copy()
    variant.train.seed = config.train.seed + repeat
    if name == "no_uncertainty":
        variant.model.use_uncertainty = False
    elif name == "no_cluster_sep":
        variant.loss.lambda_clst = 0.0
        variant.loss.lambda_sep = 0.0
    elif name == "no_push":
        variant.train.push_enabled = False
    return variant


class Manipulator(ABC):
    """Super-class orchestrating commands across the other super-classes"""
    def __init__(self, configurator: Optional[Configurator] = None, synthesizer: Optional[Synthesizer] = None,
                 calculator: Optional[Calculator] = None, pusher: Optional[Pusher] = None,
                 trainer: Optional[Trainer] = None, inspector: Optional[Inspector] = None):
        self._configurator = configurator if configurator else DefaultConfigurator(self)
        self._synthesizer = synthesizer if synthesizer else DefaultSynthesizer(self)
        self._calculator = calculator if calculator else DefaultCalculator(self)
        self._pusher = pusher if pusher else DefaultPusher(self)
        self._trainer = trainer if trainer else DefaultTrainer(self, self._calculator, self._pusher)
        self._inspector = inspector if inspector else DefaultInspector(self)
        self._registry: Dict[str, Callable[[RunConfig, Dict[str, Any]], Dict[str, Any]]] = {
            "generate-data": self._run_generate_data,
            "train": self._run_train,
            "push": self._run_push,
            "eval": self._run_eval,
            "explain": self._run_explain,
            "ablate": self._run_ablate,
        }
        logger.info("Initialized Manipulator")

    def get_commands(self) -> List[str]:
        return list(self._registry)

    def process_request(self, command: str, attributes: Dict[str, Any]) -> Dict[str, Any]:
        """Resolve the effective config and run one command"""
        if not isinstance(attributes, dict):
            logger.error(f"Attributes must be a dictionary, got {type(attributes)}")
            raise ValueError(f"Attributes must be a dictionary, got {type(attributes)}")
        if command not in self._registry:
            logger.error(f"Unsupported command: {command}")
            raise ValueError(f"Unsupported command: {command}")
        config = self._configurator.resolve(attributes)
        logger.info(f"Running '{command}' (run '{attributes.get('run_name', 'default')}')")
        result = self._registry[command](config, attributes)
        result["config_hash"] = config.config_hash()
        return result

    # helpers

    @staticmethod
    def _run_dir(config: RunConfig, attributes: Dict[str, Any]) -> str:
        path = os.path.join(config.train.runs_root, attributes.get("run_name") or "default")
        os.makedirs(path, exist_ok=True)
        return path

    @staticmethod
    def _write_json(path: str, data: Any) -> str:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
        return path

    def _checkpoint_path(self, config: RunConfig, attributes: Dict[str, Any]) -> str:
        return attributes.get("checkpoint") or os.path.join(self._run_dir(config, attributes), "final.pt")

    @staticmethod
    def _load_manifest(config: RunConfig) -> Tuple[ManifestManager, Manifest]:
        manager = ManifestManager.from_config(config)
        return manager, manager.load_manifest()

    # commands

    def _run_generate_data(self, config: RunConfig, attributes: Dict[str, Any]) -> Dict[str, Any]:
        manifest = self._synthesizer.generate_dataset(config.data)
        splits = {s: len(manifest.get_split(s)) for s in ("train", "val", "test")}
        return {"command": "generate-data", "root": config.data.root, "clips": len(manifest), "splits": splits}

    def _run_train(self, config: RunConfig, attributes: Dict[str, Any]) -> Dict[str, Any]:
        _, manifest = self._load_manifest(config)
        result = self._trainer.train(config, manifest, attributes.get("run_name") or "default")
        return {"command": "train", **{k: v for k, v in result.items() if k not in ("model", "history")}}

    def _run_push(self, config: RunConfig, attributes: Dict[str, Any]) -> Dict[str, Any]:
        manager, manifest = self._load_manifest(config)
        model, model_config, payload = load_checkpoint(self._checkpoint_path(config, attributes))
        dataset = ClipDataset(manager, manifest.get_split("train"), image_mode=model.input_mode == "image")
        self._pusher.batch_size = config.train.push_batch_size
        report = self._pusher.push_prototypes(model, dataset, payload["epoch"])
        run_dir = self._run_dir(config, attributes)
        report_path = self._pusher.save_report(report, os.path.join(run_dir, "push_manual.json"))
        ckpt = save_checkpoint(os.path.join(run_dir, "pushed.pt"), model, model_config, payload["epoch"])
        return {"command": "push", "checkpoint": ckpt, "report": report_path,
                "total_distance": report.total_distance()}

    def oracle_records(self, manifest: Manifest, num_classes: int) -> List[PredictionRecord]:
        """Perfect stub predictor: all mass on the true label, alpha 0"""
        records = []
        for e in manifest:
            joint = np.zeros(num_classes + 1)
            joint[e.label] = 1.0
            records.append(PredictionRecord(e.clip_id, e.cine_id, e.study_id, e.label, joint, 0.0, e.ambiguous,
                                            class_probs=joint[:-1]))
        return records

    def _evaluate(self, config: RunConfig, attributes: Dict[str, Any], split: str,
                  model: Optional[ProtoASNet] = None) -> Tuple[Dict[str, Any], List[PredictionRecord]]:
        manager, manifest = self._load_manifest(config)
        split_manifest = manifest.get_split(split)
        if len(split_manifest) == 0:
            logger.error(f"Split '{split}' is empty")
            raise ValueError(f"Split '{split}' is empty")
        oracle = attributes.get("oracle", False)
        if oracle:
            records = self.oracle_records(split_manifest, config.num_classes)
            has_uncertainty, num_prototypes, diagnostics = True, None, {}
        else:
            if model is None:
                model, _, _ = load_checkpoint(self._checkpoint_path(config, attributes))
            records = self._trainer.predict(model, manager, split_manifest, config.eval.batch_size)
            has_uncertainty, num_prototypes = model.has_uncertainty, model.bank.size
            diagnostics = model.diagnostics.to_dict()
        metrics = self._calculator.execute(records, {
            "type": "metrics",
            "split": split,
            "classes": list(range(config.num_classes)),
            "alpha_threshold": config.eval.alpha_threshold,
            "uncertainty_score": "alpha" if has_uncertainty else "entropy",
            "num_prototypes": num_prototypes,
            "sparsity_coverage": config.eval.sparsity_coverage,
            "diversity_top_k": config.eval.diversity_top_k,
            "output_normalization": config.model.output_normalization,
            "config_hash": config.config_hash(),
            "model_diagnostics": diagnostics,
        })
        metrics["header"]["predictor"] = "oracle" if oracle else "model"
        return metrics, records

    def _run_eval(self, config: RunConfig, attributes: Dict[str, Any]) -> Dict[str, Any]:
        split = attributes.get("split") or config.eval.split
        metrics, records = self._evaluate(config, attributes, split)
        run_dir = self._run_dir(config, attributes)
        path = self._write_json(os.path.join(run_dir, f"metrics_{split}.json"), metrics)
        result = {"command": "eval", "metrics": path, "clip_bacc": metrics["clip"]["bacc"],
                  "study_bacc": metrics["study"]["bacc"]}
        if attributes.get("export_csv"):
            result["predictions"] = self.export_predictions(records, os.path.join(run_dir, f"predictions_{split}.csv"))
        return result

    @staticmethod
    def export_predictions(records: List[PredictionRecord], path: str) -> str:
        rows = []
        for r in records:
            row = {"clip_id": r.clip_id, "cine_id": r.cine_id, "study_id": r.study_id, "label": r.label,
                   "predicted": r.predicted_class, "alpha": r.alpha, "ambiguous": r.ambiguous}
            row.update({f"p{c}": float(v) for c, v in enumerate(r.joint_probs[:-1])})
            rows.append(row)
        pd.DataFrame(rows).to_csv(path, index=False)
        logger.info(f"Exported {len(rows)} predictions to '{path}'")
        return path

    def _run_explain(self, config: RunConfig, attributes: Dict[str, Any]) -> Dict[str, Any]:
        manager, manifest = self._load_manifest(config)
        model, _, _ = load_checkpoint(self._checkpoint_path(config, attributes))
        split = attributes.get("split") or config.eval.split
        inspector = self._inspector
        inspector.settings = config.explain
        out_dir = attributes.get("out_dir") or os.path.join(self._run_dir(config, attributes), "explain")
        header = {"config_hash": config.config_hash(), "output_normalization": config.model.output_normalization}
        result = inspector.execute(model, {"type": "explain", "manager": manager, "manifest": manifest,
                                           "split_manifest": manifest.get_split(split), "out_dir": out_dir,
                                           "header": header})
        return {"command": "explain", "out_dir": out_dir, **result}

    def _run_ablate(self, config: RunConfig, attributes: Dict[str, Any]) -> Dict[str, Any]:
        _, manifest = self._load_manifest(config)
        base_name = attributes.get("run_name") or "default"
        split = config.ablation.split
        rows = []
        for name in ABLATIONS:
            for repeat in range(config.ablation.repeats):
                variant = ablation_config(config, name, repeat)
                run_name = f"{base_name}/ablate_{name}_r{repeat}"
                trained = self._trainer.train(variant, manifest, run_name)
                metrics, _ = self._evaluate(variant, {}, split, trained["model"])
                explanations = metrics["explanations"] or {}
                rows.append({"ablation": name, "repeat": repeat, "seed": variant.train.seed,
                             "bacc": metrics["clip"]["bacc"], "study_bacc": metrics["study"]["bacc"],
                             "bmae": metrics["clip"]["bmae"],
                             "auroc": metrics["uncertainty"]["misclassification_auroc"],
                             "score": metrics["uncertainty"]["score"],
                             "sparsity": explanations.get("sparsity"), "diversity": explanations.get("diversity")})
                logger.info(f"Ablation '{name}' repeat {repeat}: bACC {rows[-1]['bacc']:.4f}")
        summary = self._calculator.execute(rows, {"type": "ablation_summary", "metrics": ABLATION_METRICS})
        run_dir = self._run_dir(config, attributes)
        json_path = self._write_json(os.path.join(run_dir, "ablation.json"), {"runs": rows, "summary": summary})
        csv_path = os.path.join(run_dir, "ablation.csv")
        pd.DataFrame(summary).to_csv(csv_path, index=False)
        chart_path = self.plot_ablation(summary, os.path.join(run_dir, "ablation.png"))
        return {"command": "ablate", "rows": len(summary), "json": json_path, "csv": csv_path, "chart": chart_path}

    @staticmethod
    def plot_ablation(summary: List[Dict[str, Any]], path: str) -> str:
        """Grouped bar chart of metric means with std error bars"""
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        metrics = ["bacc", "bmae", "auroc", "sparsity", "diversity"]
        width = 0.8 / max(1, len(summary))
        fig, ax = plt.subplots(figsize=(9, 4))
        for i, row in enumerate(summary):
            means = [row.get(f"{m}_mean") or 0.0 for m in metrics]
            stds = [row.get(f"{m}_std") or 0.0 for m in metrics]
            positions = np.arange(len(metrics)) + i * width
            ax.bar(positions, means, width, yerr=stds, label=row["ablation"], capsize=2)
        ax.set_xticks(np.arange(len(metrics)) + width * (len(summary) - 1) / 2)
        ax.set_xticklabels(metrics)
        ax.set_ylim(0, 1.05)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)
        return path

    def __repr__(self) -> str:
        return f"Manipulator(commands={self.get_commands()})"


class DefaultManipulator(Manipulator):
    def __init__(self):
        super().__init__()
        logger.info("Initialized DefaultManipulator")
