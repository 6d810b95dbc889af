# super/calculator.py
from abc import ABC
from collections import OrderedDict
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import entropy
from sklearn.metrics import balanced_accuracy_score, f1_score, recall_score, roc_auc_score

from base.outputs import PredictionRecord
from utils.diagnostics import Diagnostics
from utils.validation import check_non_empty
from utils.logging_setup import logger

COVERAGE_TOLERANCE = 1e-9


class Calculator(ABC):
    """Super-class for metrics and hierarchical aggregation of clip predictions"""
    def __init__(self, manipulator: Optional['Manipulator'] = None):
        """Initialize the Calculator"""
        self._manipulator = manipulator
        self.diagnostics = Diagnostics()
        logger.info("Initialized Calculator")

    # aggregation

    def aggregate(self, vectors: Sequence[Sequence[float]]) -> Tuple[np.ndarray, int]:
        """Mean of joint probability vectors and the argmax over the class entries (alpha slot excluded)"""
        check_non_empty(vectors, "Aggregation group")
        mean = np.mean(np.asarray(vectors, dtype=np.float64), axis=0)
        class_part = mean[:-1]
        predicted = int(np.argmax(class_part))
        if np.count_nonzero(class_part == class_part[predicted]) > 1:
            self.diagnostics.increment("argmax_tie")
        return mean, predicted

    def _group(self, records: Sequence[PredictionRecord], level: str,
               alpha_threshold: Optional[float] = None) -> Tuple[List[Dict[str, Any]], float]:
        """Clip -> cine (-> study) groups; returns groups and the fraction of clips retained"""
        if level not in ("clip", "cine", "study"):
            logger.error(f"Unknown aggregation level '{level}'")
            raise ValueError(f"Unknown aggregation level '{level}'")
        if level == "clip":
            groups = [{"id": r.clip_id, "label": r.label, "joint_probs": r.joint_probs,
                       "predicted": r.predicted_class, "alpha": r.alpha} for r in records]
            return groups, 1.0

        cines: "OrderedDict[str, List[PredictionRecord]]" = OrderedDict()
        for r in records:
            cines.setdefault(r.cine_id, []).append(r)
        retained_total = 0
        cine_groups = []
        for cine_id, members in cines.items():
            kept = members
            if alpha_threshold is not None:
                kept = [r for r in members if r.alpha <= alpha_threshold] or members
            retained_total += len(kept)
            mean, predicted = self.aggregate([r.joint_probs for r in kept])
            cine_groups.append({"id": cine_id, "study_id": members[0].study_id,
                                "label": self._group_label(cine_id, [r.label for r in members]),
                                "joint_probs": mean, "predicted": predicted, "alpha": float(mean[-1])})
        coverage = retained_total / len(records)
        if level == "cine":
            return cine_groups, coverage

        studies: "OrderedDict[str, List[Dict[str, Any]]]" = OrderedDict()
        for g in cine_groups:
            studies.setdefault(g["study_id"], []).append(g)
        study_groups = []
        for study_id, members in studies.items():
            mean, predicted = self.aggregate([g["joint_probs"] for g in members])
            study_groups.append({"id": study_id, "label": self._group_label(study_id, [g["label"] for g in members]),
                                 "joint_probs": mean, "predicted": predicted, "alpha": float(mean[-1])})
        return study_groups, coverage

    @staticmethod
    def _group_label(group_id: str, labels: List[int]) -> int:
        values, counts = np.unique(labels, return_counts=True)
        if len(values) > 1:
            logger.warning(f"Group '{group_id}' mixes labels {values.tolist()}; using the most frequent")
        return int(values[np.argmax(counts)])

    # classification metrics

    @staticmethod
    def _check_classes(labels: np.ndarray, classes: Optional[Sequence[int]]) -> List[int]:
        if labels.size == 0:
            logger.error("Metric called with no samples")
            raise ValueError("Metrics need at least one sample")
        if classes is None:
            return sorted(int(c) for c in np.unique(labels))
        absent = [c for c in classes if not np.any(labels == c)]
        if absent:
            logger.error(f"Classes {absent} have no samples")
            raise ValueError(f"Every class needs at least one sample; absent: {absent}")
        return list(classes)

    def balanced_accuracy(self, preds: Sequence[int], labels: Sequence[int],
                          classes: Optional[Sequence[int]] = None) -> float:
        """Mean per-class recall"""
        preds, labels = np.asarray(preds), np.asarray(labels)
        classes = self._check_classes(labels, classes)
        if set(classes) != set(np.unique(labels).tolist()):
            mask = np.isin(labels, classes)
            preds, labels = preds[mask], labels[mask]
        return float(balanced_accuracy_score(labels, preds))

    def per_class_recall(self, preds: Sequence[int], labels: Sequence[int],
                         classes: Optional[Sequence[int]] = None) -> List[float]:
        preds, labels = np.asarray(preds), np.asarray(labels)
        classes = self._check_classes(labels, classes)
        return [float(v) for v in recall_score(labels, preds, labels=classes, average=None, zero_division=0)]

    def macro_f1(self, preds: Sequence[int], labels: Sequence[int], classes: Optional[Sequence[int]] = None) -> float:
        """Unweighted mean of per-class F1 (0 when precision + recall = 0)"""
        preds, labels = np.asarray(preds), np.asarray(labels)
        classes = self._check_classes(labels, classes)
        return float(f1_score(labels, preds, labels=classes, average="macro", zero_division=0))

    def per_class_f1(self, preds: Sequence[int], labels: Sequence[int],
                     classes: Optional[Sequence[int]] = None) -> List[float]:
        preds, labels = np.asarray(preds), np.asarray(labels)
        classes = self._check_classes(labels, classes)
        return [float(v) for v in f1_score(labels, preds, labels=classes, average=None, zero_division=0)]

    def balanced_mae(self, preds: Sequence[int], labels: Sequence[int],
                     classes: Optional[Sequence[int]] = None) -> float:
        """Mean over classes of the MAE of predicted vs true ordinal index"""
        preds, labels = np.asarray(preds, dtype=np.float64), np.asarray(labels)
        classes = self._check_classes(labels, classes)
        return float(np.mean([np.mean(np.abs(preds[labels == c] - c)) for c in classes]))

    def misclassification_auroc(self, scores: Sequence[float], correct: Sequence[bool]) -> float:
        """AUROC of scores ranking misclassified samples (positives) above correct ones; ties count half"""
        correct = np.asarray(correct, dtype=bool)
        positives = ~correct
        if positives.all() or correct.all():
            logger.error("AUROC needs both correct and misclassified samples")
            raise ValueError("AUROC needs both correct and misclassified samples")
        return float(roc_auc_score(positives.astype(int), np.asarray(scores, dtype=np.float64)))

    def ambiguity_auroc(self, scores: Sequence[float], ambiguous: Sequence[bool]) -> float:
        """AUROC of scores separating ambiguous (positives) from clean samples"""
        return self.misclassification_auroc(scores, ~np.asarray(ambiguous, dtype=bool))

    @staticmethod
    def entropy_score(class_probs: np.ndarray) -> np.ndarray:
        """Predictive entropy of class distributions [N, C]"""
        return entropy(np.asarray(class_probs, dtype=np.float64), axis=-1)

    # explanation quality

    def sparsity_score(self, contributions: np.ndarray, num_prototypes: int, coverage: float = 0.9) -> float:
        """Mean size of the smallest prototype set covering `coverage` of the positive contribution, over P.

        Samples without positive contribution are skipped and counted in diagnostics.
        """
        contributions = np.atleast_2d(np.asarray(contributions, dtype=np.float64))
        sizes = []
        for row in contributions:
            positive = np.sort(np.clip(row, 0.0, None))[::-1]
            total = positive.sum()
            if total <= 0:
                self.diagnostics.increment("zero_contribution")
                continue
            covered = np.cumsum(positive) >= coverage * total * (1.0 - COVERAGE_TOLERANCE)
            sizes.append(int(np.argmax(covered)) + 1)
        if not sizes:
            logger.warning("No sample has positive contribution; sparsity undefined")
            return float("nan")
        return float(np.mean(sizes)) / num_prototypes

    def diversity_score(self, contributions: np.ndarray, num_prototypes: int, top_k: int = 3) -> float:
        """Fraction of prototypes appearing in some sample's top-k contribution set"""
        contributions = np.atleast_2d(np.asarray(contributions, dtype=np.float64))
        used = set()
        for row in contributions:
            used.update(np.argsort(-row, kind="stable")[:top_k].tolist())
        return len(used) / num_prototypes

    # reports

    def _classification_section(self, groups: List[Dict[str, Any]], classes: Sequence[int]) -> Dict[str, Any]:
        preds = [g["predicted"] for g in groups]
        labels = np.array([g["label"] for g in groups])
        present = [c for c in classes if np.any(labels == c)]
        if len(present) < len(classes):
            logger.warning(f"Classes {sorted(set(classes) - set(present))} absent; metrics over {present}")
        return {
            "n": len(groups),
            "classes": present,
            "bacc": self.balanced_accuracy(preds, labels, present),
            "macro_f1": self.macro_f1(preds, labels, present),
            "bmae": self.balanced_mae(preds, labels, present),
            "per_class_recall": self.per_class_recall(preds, labels, present),
            "per_class_f1": self.per_class_f1(preds, labels, present),
        }

    def _safe_auroc(self, scores, flags, name: str, ambiguity: bool = False) -> Optional[float]:
        try:
            return self.ambiguity_auroc(scores, flags) if ambiguity else self.misclassification_auroc(scores, flags)
        except ValueError:
            logger.warning(f"{name} undefined on this split (only one outcome present)")
            return None

    def _calculate_metrics(self, records: List[PredictionRecord], attributes: Dict[str, Any]) -> Dict[str, Any]:
        """Full metrics document: clip/cine/study sections, uncertainty, explanation quality, diagnostics"""
        check_non_empty(records, "Evaluation split")
        classes = attributes.get("classes") or sorted({r.label for r in records})
        threshold = attributes.get("alpha_threshold")
        score_name = attributes.get("uncertainty_score", "alpha")
        self.diagnostics.reset()

        report: Dict[str, Any] = {"header": {
            "split": attributes.get("split"),
            "output_normalization": attributes.get("output_normalization", "joint"),
            "config_hash": attributes.get("config_hash"),
            "num_clips": len(records),
            "uncertainty_score": score_name,
        }}
        clip_groups, _ = self._group(records, "clip")
        report["clip"] = self._classification_section(clip_groups, classes)
        for level in ("cine", "study"):
            groups, coverage = self._group(records, level, threshold)
            report[level] = self._classification_section(groups, classes)
        report["aggregation"] = {"alpha_threshold": threshold, "coverage": coverage}

        clean = [g for g, r in zip(clip_groups, records) if not r.ambiguous]
        report["clean_clip"] = self._classification_section(clean, classes) if clean else None

        correct = [r.predicted_class == r.label for r in records]
        if score_name == "entropy":
            scores = self.entropy_score([r.class_probs if r.class_probs is not None else r.joint_probs[:-1]
                                         for r in records])
        else:
            scores = [r.alpha for r in records]
        report["uncertainty"] = {
            "score": score_name,
            "misclassification_auroc": self._safe_auroc(scores, correct, "Misclassification AUROC"),
            "ambiguity_auroc": self._safe_auroc(scores, [r.ambiguous for r in records], "Ambiguity AUROC", True),
            "mean_alpha": float(np.mean([r.alpha for r in records])),
        }

        with_contrib = [r.contributions for r in records if r.contributions is not None]
        num_prototypes = attributes.get("num_prototypes")
        if with_contrib and num_prototypes:
            contributions = np.stack(with_contrib)
            report["explanations"] = {
                "sparsity": self.sparsity_score(contributions, num_prototypes,
                                                attributes.get("sparsity_coverage", 0.9)),
                "diversity": self.diversity_score(contributions, num_prototypes,
                                                  attributes.get("diversity_top_k", 3)),
            }
        else:
            report["explanations"] = None
        report["diagnostics"] = {**attributes.get("model_diagnostics", {}), **self.diagnostics.to_dict()}
        logger.info(f"Metrics on {len(records)} clips: clip bACC {report['clip']['bacc']:.4f}, "
                    f"study bACC {report['study']['bacc']:.4f}")
        return report

    def _calculate_aggregate(self, records: List[PredictionRecord], attributes: Dict[str, Any]) -> List[Dict[str, Any]]:
        groups, _ = self._group(records, attributes.get("level", "study"), attributes.get("alpha_threshold"))
        return [{**g, "joint_probs": np.asarray(g["joint_probs"]).tolist()} for g in groups]

    def _calculate_ablation_summary(self, rows: List[Dict[str, Any]], attributes: Dict[str, Any]) -> List[Dict[str, Any]]:
        """Mean and std of each metric across repetitions, one output row per ablation"""
        by_name: "OrderedDict[str, List[Dict[str, Any]]]" = OrderedDict()
        for row in rows:
            by_name.setdefault(row["ablation"], []).append(row)
        summary = []
        for name, runs in by_name.items():
            out = {"ablation": name, "repeats": len(runs)}
            for key in attributes.get("metrics", ("bacc", "bmae", "auroc", "sparsity", "diversity")):
                values = np.array([r[key] for r in runs if r.get(key) is not None], dtype=np.float64)
                out[f"{key}_mean"] = float(np.mean(values)) if values.size else None
                out[f"{key}_std"] = float(np.std(values)) if values.size else None
            summary.append(out)
        return summary

    def execute(self, obj: Any, attributes: Dict[str, Any]) -> Any:
        """Universal method to perform calculations on an object

        Args:
            obj: The object to calculate on (e.g., a list of PredictionRecord)
            attributes: Dictionary with calculation parameters (e.g., {"type": "metrics", "classes": [0, 1, 2]})

        Returns:
            Results of the calculation
        """
        if obj is None:
            logger.error("Calculation object cannot be None")
            raise ValueError("Calculation object cannot be None")
        calc_type = attributes.get("type")
        if not calc_type:
            logger.error("Calculation type must be specified in attributes")
            raise ValueError("Calculation type must be specified in attributes")
        method = getattr(self, f"_calculate_{calc_type}", None)
        if method is None:
            logger.error(f"No calculation method found for type '{calc_type}'")
            raise ValueError(f"No calculation method for type '{calc_type}'")
        return method(obj, attributes)

    def __repr__(self) -> str:
        return "Calculator()"


class DefaultCalculator(Calculator):
    """Default implementation of Calculator"""
    def __init__(self, manipulator: Optional['Manipulator'] = None):
        super().__init__(manipulator)
        logger.info("Initialized DefaultCalculator")
