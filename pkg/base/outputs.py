# base/outputs.py
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch

from base.base_entity import BaseEntity
from utils.validation import check_probability_vector, check_range
from utils.logging_setup import logger


def normalize_outputs(logits, mode: str = "joint",
                      has_uncertainty: bool = True) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Turn head logits into (class_probs, joint_probs, alpha).

    Works on a single logit vector or a batch (last dimension = outputs).

    mode "joint":    joint_probs = softmax over all C+1 logits, alpha = joint_probs[C],
                     class_probs = softmax over the first C logits.
    mode "separate": class_probs as above, alpha = sigmoid(logit C),
                     joint_probs = ((1 - alpha) * class_probs, alpha).

    Without uncertainty outputs the logits have length C, alpha is 0 and
    joint_probs is class_probs with a trailing 0.
    """
    if not torch.is_tensor(logits):
        logits = torch.as_tensor(np.asarray(logits, dtype=np.float64))
    if not torch.all(torch.isfinite(logits)):
        logger.error(f"Non-finite logits passed to normalize_outputs: {logits}")
        raise ValueError("Logits must be finite")
    if mode not in ("joint", "separate"):
        logger.error(f"Unknown output normalization '{mode}'")
        raise ValueError(f"Unknown output normalization '{mode}'")

    if not has_uncertainty:
        class_probs = torch.softmax(logits, dim=-1)
        alpha = torch.zeros(logits.shape[:-1], dtype=logits.dtype, device=logits.device)
        joint_probs = torch.cat([class_probs, alpha.unsqueeze(-1)], dim=-1)
        return class_probs, joint_probs, alpha

    class_logits = logits[..., :-1]
    class_probs = torch.softmax(class_logits, dim=-1)
    if mode == "joint":
        joint_probs = torch.softmax(logits, dim=-1)
        alpha = joint_probs[..., -1]
    else:
        alpha = torch.sigmoid(logits[..., -1])
        joint_probs = torch.cat([(1.0 - alpha).unsqueeze(-1) * class_probs, alpha.unsqueeze(-1)], dim=-1)
    return class_probs, joint_probs, alpha


class ModelOutput(BaseEntity):
    """Per-clip model output: similarities [P], logits [C+1], class_probs [C], joint_probs [C+1], alpha"""
    def __init__(self, similarities: np.ndarray, logits: np.ndarray, class_probs: np.ndarray,
                 joint_probs: np.ndarray, alpha: float):
        self.similarities = np.asarray(similarities, dtype=np.float64)
        self.logits = np.asarray(logits, dtype=np.float64)
        self.class_probs = np.asarray(class_probs, dtype=np.float64)
        self.joint_probs = np.asarray(joint_probs, dtype=np.float64)
        self.alpha = float(alpha)
        check_probability_vector(self.class_probs, "class_probs")
        check_probability_vector(self.joint_probs, "joint_probs")
        check_range(self.alpha, 0.0, 1.0, "alpha")

    @property
    def predicted_class(self) -> int:
        """Argmax over the class entries of joint_probs (ties toward the lower index)"""
        return int(np.argmax(self.joint_probs[:-1]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "similarities": self.similarities.tolist(),
            "logits": self.logits.tolist(),
            "class_probs": self.class_probs.tolist(),
            "joint_probs": self.joint_probs.tolist(),
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelOutput':
        return cls(similarities=data["similarities"], logits=data["logits"], class_probs=data["class_probs"],
                   joint_probs=data["joint_probs"], alpha=data["alpha"])

    def __repr__(self) -> str:
        return f"ModelOutput(predicted={self.predicted_class}, alpha={self.alpha:.4f})"


class PredictionRecord(BaseEntity):
    """Clip-level prediction with its position in the clip -> cine -> study hierarchy"""
    def __init__(self, clip_id: str, cine_id: str, study_id: str, label: int, joint_probs,
                 alpha: float, ambiguous: bool = False, class_probs: Optional[np.ndarray] = None,
                 contributions: Optional[np.ndarray] = None):
        self.clip_id = clip_id
        self.cine_id = cine_id
        self.study_id = study_id
        self.label = int(label)
        self.joint_probs = np.asarray(joint_probs, dtype=np.float64)
        check_probability_vector(self.joint_probs, f"joint_probs of '{clip_id}'")
        self.alpha = float(alpha)
        self.ambiguous = bool(ambiguous)
        self.class_probs = np.asarray(class_probs, dtype=np.float64) if class_probs is not None else None
        # [P] contributions w_h[pred, p] * g_p toward the predicted class
        self.contributions = np.asarray(contributions, dtype=np.float64) if contributions is not None else None

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.joint_probs[:-1]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "clip_id": self.clip_id,
            "cine_id": self.cine_id,
            "study_id": self.study_id,
            "label": self.label,
            "joint_probs": self.joint_probs.tolist(),
            "alpha": self.alpha,
            "ambiguous": self.ambiguous,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PredictionRecord':
        return cls(clip_id=data["clip_id"], cine_id=data["cine_id"], study_id=data["study_id"],
                   label=data["label"], joint_probs=data["joint_probs"], alpha=data["alpha"],
                   ambiguous=data.get("ambiguous", False))

    def __repr__(self) -> str:
        return (f"PredictionRecord(clip_id='{self.clip_id}', label={self.label}, "
                f"predicted={self.predicted_class}, alpha={self.alpha:.4f})")


class ExplanationReport(BaseEntity):
    """Ranked prototype evidence for one clip.

    Entries are dicts (prototype, tag, similarity, weight, contribution), ranked
    by contribution to the predicted class; alpha_entries rank the same terms
    for the uncertainty output.
    """
    def __init__(self, clip_id: str, label: int, predicted_class: int, alpha: float, joint_probs,
                 logits, entries: List[Dict[str, Any]], alpha_entries: Optional[List[Dict[str, Any]]] = None,
                 media: Optional[Dict[str, str]] = None, header: Optional[Dict[str, Any]] = None):
        self.clip_id = clip_id
        self.label = int(label)
        self.predicted_class = int(predicted_class)
        self.alpha = float(alpha)
        self.joint_probs = np.asarray(joint_probs, dtype=np.float64)
        self.logits = np.asarray(logits, dtype=np.float64)
        self.entries = entries
        self.alpha_entries = alpha_entries or []
        self.media = media or {}
        self.header = header or {}

    def contribution_sum(self, alpha_row: bool = False) -> float:
        return float(sum(e["contribution"] for e in (self.alpha_entries if alpha_row else self.entries)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "header": self.header,
            "clip_id": self.clip_id,
            "label": self.label,
            "predicted_class": self.predicted_class,
            "alpha": self.alpha,
            "joint_probs": self.joint_probs.tolist(),
            "logits": self.logits.tolist(),
            "entries": self.entries,
            "alpha_entries": self.alpha_entries,
            "media": self.media,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExplanationReport':
        return cls(clip_id=data["clip_id"], label=data["label"], predicted_class=data["predicted_class"],
                   alpha=data["alpha"], joint_probs=data["joint_probs"], logits=data["logits"],
                   entries=data["entries"], alpha_entries=data.get("alpha_entries"), media=data.get("media"),
                   header=data.get("header"))

    def __repr__(self) -> str:
        top = self.entries[0]["prototype"] if self.entries else None
        return f"ExplanationReport(clip_id='{self.clip_id}', predicted={self.predicted_class}, top={top})"
