# super/pusher.py
import json
import os
from abc import ABC
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader

from base.prototypes import UNCERTAINTY, Provenance, PushRecord, PushReport
from nets.protoasnet import ProtoASNet
from utils.manifestmanager import ClipDataset
from utils.logging_setup import logger


def nearest_embedding(p: np.ndarray, candidates: Sequence[Tuple[str, np.ndarray]]) -> Tuple[str, np.ndarray]:
    """Candidate closest to p in Euclidean distance; ties go to the lowest clip_id"""
    if len(candidates) == 0:
        logger.error("nearest_embedding called with no candidates")
        raise ValueError("Candidate set must not be empty")
    p64 = np.asarray(p, dtype=np.float64)
    best_id, best_vec, best_dist = None, None, np.inf
    for clip_id, vec in sorted(candidates, key=lambda item: item[0]):
        dist = float(np.linalg.norm(np.asarray(vec, dtype=np.float64) - p64))
        if dist < best_dist:
            best_id, best_vec, best_dist = clip_id, vec, dist
    return best_id, best_vec


class Pusher(ABC):
    """Super-class for projecting prototypes onto pooled training embeddings"""
    def __init__(self, manipulator: Optional['Manipulator'] = None, batch_size: int = 1):
        self._manipulator = manipulator
        self.batch_size = batch_size
        logger.info("Initialized Pusher")

    def collect_embeddings(self, model: ProtoASNet, dataset: ClipDataset) -> np.ndarray:
        """Pooled features f_p(x_i) for every training clip: [N, P, D]"""
        loader = DataLoader(dataset, batch_size=self.batch_size, shuffle=False, num_workers=0)
        param = next(model.parameters())
        pooled = []
        was_training = model.training
        model.eval()
        with torch.no_grad():
            for x, _, _, _, frame_index in loader:
                x = model.select_frames(x.to(param.device, param.dtype), frame_index)
                pooled.append(model(x).pooled.cpu().numpy())
        model.train(was_training)
        return np.concatenate(pooled, axis=0)

    def push_prototypes(self, model: ProtoASNet, dataset: ClipDataset, epoch: int) -> PushReport:
        """Replace each prototype with its nearest candidate embedding and record provenance.

        Class-c prototypes search clips labelled c; uncertainty prototypes search every clip.
        """
        bank = model.bank
        entries = dataset.entries
        labels = np.array([e.label for e in entries])
        for c in range(bank.num_classes):
            if not np.any(labels == c):
                logger.error(f"Push needs training clips of every class; class {c} has none")
                raise ValueError(f"Cannot push: class {c} has no training clips")

        embeddings = self.collect_embeddings(model, dataset)
        old = model.prototypes.prototype_vectors.detach().cpu().numpy().copy()
        new = old.copy()
        report = PushReport(epoch)
        for p in range(bank.size):
            tag = bank.class_of(p)
            members = range(len(entries)) if tag == UNCERTAINTY else np.flatnonzero(labels == tag)
            candidates = [(entries[i].clip_id, embeddings[i, p]) for i in members
                          if np.any(embeddings[i, p] != 0)]
            if not candidates:
                logger.warning(f"Prototype {p} has only zero-norm candidates; left unchanged")
                continue
            clip_id, vector = nearest_embedding(old[p], candidates)
            source = next(e for e in entries if e.clip_id == clip_id)
            distance = float(np.linalg.norm(vector.astype(np.float64) - old[p].astype(np.float64)))
            new[p] = vector
            bank.set_provenance(p, Provenance(clip_id, epoch, source.label))
            report.add_record(PushRecord(p, tag, old[p], vector, clip_id, source.label, distance))
            logger.debug(f"Pushed prototype {p} ({tag}) onto '{clip_id}', moved {distance:.6f}")

        model.prototypes.set_vectors(torch.as_tensor(new, dtype=model.prototypes.prototype_vectors.dtype))
        bank.set_vectors(new)
        logger.info(f"Push at epoch {epoch}: {len(report)} prototypes, max move {report.max_distance():.6f}")
        return report

    @staticmethod
    def save_report(report: PushReport, path: str) -> str:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        logger.info(f"Saved push report to '{path}'")
        return path

    def __repr__(self) -> str:
        return f"Pusher(batch_size={self.batch_size})"


class DefaultPusher(Pusher):
    """Default implementation of Pusher"""
    def __init__(self, manipulator: Optional['Manipulator'] = None, batch_size: int = 1):
        super().__init__(manipulator, batch_size)
        logger.info("Initialized DefaultPusher")
