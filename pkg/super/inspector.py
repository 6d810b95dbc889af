# super/inspector.py
import html
import json
import os
from abc import ABC
from typing import Any, Dict, List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from matplotlib import colormaps

from base.clips import Clip, ClipRecord, Manifest
from base.outputs import ExplanationReport
from base.prototypes import UNCERTAINTY
from base.run_config import ExplainConfig
from nets.protoasnet import ProtoASNet
from utils.manifestmanager import ManifestManager
from utils.media import to_uint8, write_frames, write_gif
from utils.logging_setup import logger

CONTRIBUTION_TOLERANCE = 1e-4


class Inspector(ABC):
    """Super-class for explanations: ROI overlays, the prototype gallery and per-clip reasoning reports

    Methods:
        upsample_overlay: render one occurrence map over its clip
        prototype_gallery: overlays of every prototype on its push source clip
        reasoning_report: ranked evidence behind one prediction
        execute: dispatch by {"type": ...}
    """
    def __init__(self, manipulator: Optional['Manipulator'] = None, settings: Optional[ExplainConfig] = None):
        """Initialize the Inspector"""
        self._manipulator = manipulator
        self.settings = settings if settings is not None else ExplainConfig()
        logger.info("Initialized Inspector")

    # overlays

    @staticmethod
    def upsample_map(occurrence_map: np.ndarray, size) -> Optional[np.ndarray]:
        """|M| min-max normalized and trilinearly upsampled to (T_o, H_o, W_o).

        occurrence_map is [H, W, T]. Returns None for an all-zero map and a
        uniform map of ones for a constant nonzero map.
        """
        magnitude = np.abs(np.asarray(occurrence_map, dtype=np.float64))
        low, high = magnitude.min(), magnitude.max()
        if high == 0:
            return None
        t_o, h_o, w_o = size
        if high == low:
            return np.ones((t_o, h_o, w_o))
        normalized = (magnitude - low) / (high - low)
        volume = torch.from_numpy(np.transpose(normalized, (2, 0, 1)).copy())[None, None]
        upsampled = F.interpolate(volume, size=(t_o, h_o, w_o), mode="trilinear", align_corners=False)
        return upsampled[0, 0].numpy()

    def upsample_overlay(self, occurrence_map: np.ndarray, clip: Clip) -> np.ndarray:
        """RGB overlay frames [T_o, H_o, W_o, 3] (uint8); an all-zero map renders the raw clip"""
        gray = clip.to_frames().astype(np.float64)
        base = np.repeat(gray[..., None], 3, axis=3)
        heat = self.upsample_map(occurrence_map, gray.shape)
        if heat is None:
            return to_uint8(base)
        colored = colormaps[self.settings.colormap](heat)[..., :3]
        opacity = self.settings.opacity
        return to_uint8((1.0 - opacity) * base + opacity * colored)

    def write_overlay(self, directory: str, frames: np.ndarray) -> Dict[str, str]:
        write_frames(directory, frames)
        gif = write_gif(os.path.join(directory, "overlay.gif"), frames, self.settings.gif_duration_ms)
        return {"frames": directory, "gif": gif}

    @staticmethod
    def _forward_single(model: ProtoASNet, clip: Clip):
        """Eval-mode forward of one clip; returns (fed clip, forward pass)"""
        param = next(model.parameters())
        x = model.select_frames(clip.to_tensor(param.dtype).unsqueeze(0).to(param.device))
        was_training = model.training
        model.eval()
        with torch.no_grad():
            result = model(x)
        model.train(was_training)
        return Clip.from_tensor(x[0].clamp(0.0, 1.0), frame_rate=clip.frame_rate), result

    @staticmethod
    def _map_of(result, p: int) -> np.ndarray:
        """Occurrence map p of the first batch item as [H, W, T]"""
        return result.occurrence[0, p].permute(1, 2, 0).cpu().numpy()

    # gallery

    def prototype_gallery(self, model: ProtoASNet, manager: ManifestManager, manifest: Manifest,
                          out_dir: str) -> List[Dict[str, Any]]:
        """Overlay of M_p on each prototype's source clip, indexed by class tag"""
        bank = model.bank
        missing = [p for p in range(bank.size) if bank.get_provenance(p) is None]
        if missing:
            logger.error(f"Prototypes {missing[:5]}... have no push provenance")
            raise ValueError("Prototype gallery needs push provenance for every prototype; run 'push' first")
        by_id = {e.clip_id: e for e in manifest}
        gallery = []
        for p in range(bank.size):
            provenance = bank.get_provenance(p)
            if provenance.clip_id not in by_id:
                logger.error(f"Provenance clip '{provenance.clip_id}' of prototype {p} not in the dataset")
                raise ValueError(f"Provenance clip '{provenance.clip_id}' of prototype {p} not in the dataset")
            fed, result = self._forward_single(model, manager.load_clip(by_id[provenance.clip_id]))
            tag = bank.class_of(p)
            directory = os.path.join(out_dir, "gallery", f"class_{tag}" if tag != UNCERTAINTY else UNCERTAINTY,
                                     f"proto_{p}")
            media = self.write_overlay(directory, self.upsample_overlay(self._map_of(result, p), fed))
            gallery.append({"prototype": p, "tag": tag, "clip_id": provenance.clip_id, "label": provenance.label,
                            "epoch": provenance.epoch, "media": media})
        logger.info(f"Wrote prototype gallery with {len(gallery)} entries to '{out_dir}'")
        return gallery

    # reasoning

    def reasoning_report(self, record: ClipRecord, model: ProtoASNet, out_dir: Optional[str] = None,
                         header: Optional[Dict[str, Any]] = None) -> ExplanationReport:
        """Rank prototypes by contribution w_h[r, p] * g_p to the predicted class and to alpha"""
        fed, result = self._forward_single(model, record.clip)
        bank = model.bank
        sims = result.similarities[0].cpu().numpy().astype(np.float64)
        weights = model.prototypes.head.weight.detach().cpu().numpy().astype(np.float64)
        logits = result.logits[0].cpu().numpy().astype(np.float64)
        joint = result.joint_probs[0].cpu().numpy()
        predicted = int(np.argmax(joint[:-1]))

        for row in range(weights.shape[0]):
            residual = abs(float(np.dot(weights[row], sims)) - logits[row])
            if residual > CONTRIBUTION_TOLERANCE:
                logger.error(f"Contributions of row {row} miss logit by {residual} for '{record.clip_id}'")
                raise RuntimeError(f"Contribution sum of row {row} deviates from its logit by {residual}")

        def ranked(row: int) -> List[Dict[str, Any]]:
            contributions = weights[row] * sims
            order = np.argsort(-contributions, kind="stable")
            return [{"prototype": int(p), "tag": bank.class_of(int(p)), "similarity": float(sims[p]),
                     "weight": float(weights[row, p]), "contribution": float(contributions[p])} for p in order]

        entries = ranked(predicted)
        alpha_entries = ranked(bank.num_classes) if model.has_uncertainty else []
        media = {}
        if out_dir is not None:
            clip_dir = os.path.join(out_dir, record.clip_id)
            for entry in entries[:self.settings.top_k]:
                p = entry["prototype"]
                frames = self.upsample_overlay(self._map_of(result, p), fed)
                media[f"proto_{p}"] = self.write_overlay(os.path.join(clip_dir, f"proto_{p}"), frames)["gif"]
        report = ExplanationReport(record.clip_id, record.label, predicted, float(result.alpha[0]), joint, logits,
                                   entries, alpha_entries, media, header)
        if out_dir is not None:
            path = os.path.join(out_dir, record.clip_id, "report.json")
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        logger.debug(f"Explained '{record.clip_id}': predicted {predicted}, top prototype {entries[0]['prototype']}")
        return report

    def write_index(self, out_dir: str, reports: List[ExplanationReport],
                    gallery: Optional[List[Dict[str, Any]]] = None) -> str:
        """Static HTML page linking every report, overlay and gallery entry"""
        def rel(path: str) -> str:
            return html.escape(os.path.relpath(path, out_dir).replace(os.sep, "/"))

        lines = ["<!DOCTYPE html>", "<html><head><meta charset=\"utf-8\"><title>Explanations</title></head><body>",
                 "<h1>Reasoning reports</h1>", "<table border=\"1\">",
                 "<tr><th>clip</th><th>label</th><th>predicted</th><th>alpha</th><th>top prototypes</th></tr>"]
        for report in reports:
            cells = " ".join(f"<img src=\"{rel(path)}\" alt=\"{html.escape(name)}\" width=\"96\">"
                             for name, path in sorted(report.media.items()))
            report_path = rel(os.path.join(out_dir, report.clip_id, "report.json"))
            lines.append(f"<tr><td><a href=\"{report_path}\">{html.escape(report.clip_id)}</a></td>"
                         f"<td>{report.label}</td><td>{report.predicted_class}</td>"
                         f"<td>{report.alpha:.4f}</td><td>{cells}</td></tr>")
        lines.append("</table>")
        if gallery:
            lines.append("<h1>Prototype gallery</h1>")
            for entry in gallery:
                lines.append(f"<figure style=\"display:inline-block\"><img src=\"{rel(entry['media']['gif'])}\" "
                             f"width=\"96\"><figcaption>p{entry['prototype']} ({html.escape(str(entry['tag']))}) "
                             f"from {html.escape(entry['clip_id'])}</figcaption></figure>")
        lines.append("</body></html>")
        path = os.path.join(out_dir, "index.html")
        os.makedirs(out_dir, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        return path

    def explain(self, model: ProtoASNet, manager: ManifestManager, manifest: Manifest, split_manifest: Manifest,
                out_dir: str, header: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Gallery plus reports for the clips of one split, and the index page"""
        gallery = self.prototype_gallery(model, manager, manifest, out_dir)
        entries = split_manifest.get_all_entries()
        if self.settings.max_clips is not None:
            entries = entries[:self.settings.max_clips]
        reports = [self.reasoning_report(manager.load_record(e), model, out_dir, header) for e in entries]
        index = self.write_index(out_dir, reports, gallery)
        logger.info(f"Explained {len(reports)} clips into '{out_dir}'")
        return {"reports": len(reports), "gallery": len(gallery), "index": index}

    def execute(self, obj: Any, attributes: Dict[str, Any]) -> Any:
        """Universal method to build explanations

        Args:
            obj: The model to explain
            attributes: {"type": "gallery" | "report" | "explain", ...} with the arguments of that method
        """
        if obj is None:
            logger.error("Inspection object cannot be None")
            raise ValueError("Inspection object cannot be None")
        kind = attributes.get("type")
        args = {k: v for k, v in attributes.items() if k != "type"}
        if kind == "gallery":
            return self.prototype_gallery(obj, **args)
        if kind == "report":
            return self.reasoning_report(model=obj, **args)
        if kind == "explain":
            return self.explain(obj, **args)
        logger.error(f"No inspection method for type '{kind}'")
        raise ValueError(f"No inspection method for type '{kind}'")

    def __repr__(self) -> str:
        return f"Inspector(opacity={self.settings.opacity}, colormap='{self.settings.colormap}')"


class DefaultInspector(Inspector):
    """Default implementation of Inspector"""
    def __init__(self, manipulator: Optional['Manipulator'] = None, settings: Optional[ExplainConfig] = None):
        super().__init__(manipulator, settings)
        logger.info("Initialized DefaultInspector")
