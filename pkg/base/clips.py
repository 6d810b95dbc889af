# base/clips.py
from typing import Any, Dict, List, Optional

import numpy as np
import torch

from base.base_entity import BaseEntity
from base.run_config import SPLITS
from utils.validation import check_non_empty_string, check_positive, check_type
from utils.logging_setup import logger

"""Clips, clip records and the dataset manifest

    Clip voxels are stored as [H_o, W_o, T_o, Ch] with values in [0, 1].
    The network consumes [Ch, T_o, H_o, W_o] (see Clip.to_tensor).

    Manifest entries carry the clip -> cine -> study hierarchy; study ids
    are exclusive to one split.
    """


class Clip(BaseEntity):
    """One video clip"""
    def __init__(self, voxels: np.ndarray, frame_rate: float = 32.0, clip_length: Optional[int] = None):
        voxels = np.asarray(voxels, dtype=np.float32)
        if voxels.ndim != 4:
            logger.error(f"Clip voxels must be [H, W, T, Ch], got shape {voxels.shape}")
            raise ValueError(f"Clip voxels must be [H, W, T, Ch], got shape {voxels.shape}")
        if voxels.size and (voxels.min() < 0.0 or voxels.max() > 1.0):
            logger.error(f"Clip voxel values must lie in [0,1], got [{voxels.min()}, {voxels.max()}]")
            raise ValueError("Clip voxel values must lie in [0,1]")
        if clip_length is not None and voxels.shape[2] != clip_length:
            logger.error(f"Clip has {voxels.shape[2]} frames, expected {clip_length}")
            raise ValueError(f"Clip has {voxels.shape[2]} frames, expected {clip_length}")
        check_positive(frame_rate, "Frame rate")
        self.voxels = voxels
        self.frame_rate = float(frame_rate)

    @property
    def shape(self):
        return self.voxels.shape

    @property
    def num_frames(self) -> int:
        return self.voxels.shape[2]

    @classmethod
    def from_frames(cls, frames: np.ndarray, frame_rate: float = 32.0) -> 'Clip':
        """Build a clip from grayscale frames [T, H, W] (uint8 or float in [0,1])"""
        data = frames.astype(np.float32) / 255.0 if frames.dtype == np.uint8 else frames.astype(np.float32)
        return cls(np.transpose(data, (1, 2, 0))[..., None], frame_rate=frame_rate)

    def to_frames(self) -> np.ndarray:
        """Grayscale frames [T, H, W] (channel mean)"""
        return np.transpose(self.voxels.mean(axis=3), (2, 0, 1))

    def to_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """[Ch, T, H, W] tensor for the encoder"""
        return torch.from_numpy(np.ascontiguousarray(np.transpose(self.voxels, (3, 2, 0, 1)))).to(dtype)

    @classmethod
    def from_tensor(cls, tensor: torch.Tensor, frame_rate: float = 32.0) -> 'Clip':
        """Inverse of to_tensor"""
        data = tensor.detach().cpu().numpy().astype(np.float32)
        return cls(np.transpose(data, (2, 3, 1, 0)), frame_rate=frame_rate)

    def select_frame(self, index: int) -> 'Clip':
        """Single-frame clip (image-based input mode)"""
        if not 0 <= index < self.num_frames:
            logger.error(f"Frame index {index} out of range for a clip of {self.num_frames} frames")
            raise IndexError(f"Frame index {index} out of range")
        return Clip(self.voxels[:, :, index:index + 1, :], frame_rate=self.frame_rate)

    def to_dict(self) -> dict:
        return {"voxels": self.voxels.tolist(), "frame_rate": self.frame_rate}

    @classmethod
    def from_dict(cls, data: dict) -> 'Clip':
        return cls(np.asarray(data["voxels"], dtype=np.float32), frame_rate=data["frame_rate"])

    def __eq__(self, other) -> bool:
        return isinstance(other, Clip) and self.frame_rate == other.frame_rate and np.array_equal(self.voxels, other.voxels)

    def __repr__(self) -> str:
        return f"Clip(shape={self.voxels.shape}, frame_rate={self.frame_rate})"


class ClipRecord(BaseEntity):
    """A clip with its label, identifiers and synthetic ground-truth ambiguity flag"""
    def __init__(self, clip: Clip, label: int, study_id: str, cine_id: str, clip_id: str,
                 ambiguous: bool = False, amplitude: Optional[float] = None, severity: Optional[int] = None):
        check_type(clip, Clip, "Clip")
        check_non_empty_string(study_id, "Study id")
        check_non_empty_string(cine_id, "Cine id")
        check_non_empty_string(clip_id, "Clip id")
        self.clip = clip
        self.label = int(label)
        self.study_id = study_id
        self.cine_id = cine_id
        self.clip_id = clip_id
        self.ambiguous = bool(ambiguous)
        # generator-side ground truth: peak leaflet opening (degrees) and the rendered severity
        self.amplitude = None if amplitude is None else float(amplitude)
        self.severity = None if severity is None else int(severity)

    def to_dict(self) -> dict:
        return {"clip": self.clip.to_dict(), "label": self.label, "study_id": self.study_id,
                "cine_id": self.cine_id, "clip_id": self.clip_id, "ambiguous": self.ambiguous,
                "amplitude": self.amplitude, "severity": self.severity}

    @classmethod
    def from_dict(cls, data: dict) -> 'ClipRecord':
        return cls(clip=Clip.from_dict(data["clip"]), label=data["label"], study_id=data["study_id"],
                   cine_id=data["cine_id"], clip_id=data["clip_id"], ambiguous=data.get("ambiguous", False),
                   amplitude=data.get("amplitude"), severity=data.get("severity"))

    def __repr__(self) -> str:
        return (f"ClipRecord(clip_id='{self.clip_id}', label={self.label}, "
                f"ambiguous={self.ambiguous}, shape={self.clip.shape})")


class ManifestEntry(BaseEntity):
    """One manifest line"""
    def __init__(self, path: str, study_id: str, cine_id: str, clip_id: str, label: int,
                 ambiguous: bool = False, split: Optional[str] = None,
                 amplitude: Optional[float] = None, severity: Optional[int] = None):
        check_non_empty_string(path, "Clip path")
        check_non_empty_string(clip_id, "Clip id")
        if split is not None and split not in SPLITS:
            logger.error(f"Split tag must be one of {SPLITS}, got {split}")
            raise ValueError(f"Split tag must be one of {SPLITS}, got {split}")
        self.path = path
        self.study_id = study_id
        self.cine_id = cine_id
        self.clip_id = clip_id
        self.label = int(label)
        self.ambiguous = bool(ambiguous)
        self.split = split
        self.amplitude = None if amplitude is None else float(amplitude)
        self.severity = None if severity is None else int(severity)

    @classmethod
    def from_record(cls, record: ClipRecord, path: str) -> 'ManifestEntry':
        return cls(path=path, study_id=record.study_id, cine_id=record.cine_id, clip_id=record.clip_id,
                   label=record.label, ambiguous=record.ambiguous, amplitude=record.amplitude,
                   severity=record.severity)

    def to_dict(self) -> Dict[str, Any]:
        return {"path": self.path, "study_id": self.study_id, "cine_id": self.cine_id,
                "clip_id": self.clip_id, "label": self.label, "ambiguous": self.ambiguous,
                "split": self.split, "amplitude": self.amplitude, "severity": self.severity}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ManifestEntry':
        return cls(path=data["path"], study_id=data["study_id"], cine_id=data["cine_id"],
                   clip_id=data["clip_id"], label=data["label"], ambiguous=data.get("ambiguous", False),
                   split=data.get("split"), amplitude=data.get("amplitude"), severity=data.get("severity"))

    def __repr__(self) -> str:
        return f"ManifestEntry(clip_id='{self.clip_id}', label={self.label}, split={self.split})"


class Manifest(BaseEntity):
    """Ordered collection of manifest entries"""
    def __init__(self, entries: List[ManifestEntry] = None):
        if entries is not None:
            check_type(entries, list, "Manifest entries")
        self._data: List[ManifestEntry] = entries if entries is not None else []
        self._check_hierarchy()

    def _check_hierarchy(self) -> None:
        """Clips with equal cine_id share study_id; clip ids are unique"""
        cine_to_study = {}
        seen = set()
        for entry in self._data:
            if entry.clip_id in seen:
                logger.error(f"Duplicate clip id '{entry.clip_id}' in manifest")
                raise ValueError(f"Duplicate clip id '{entry.clip_id}' in manifest")
            seen.add(entry.clip_id)
            study = cine_to_study.setdefault(entry.cine_id, entry.study_id)
            if study != entry.study_id:
                logger.error(f"Cine '{entry.cine_id}' spans studies '{study}' and '{entry.study_id}'")
                raise ValueError(f"Cine '{entry.cine_id}' spans studies '{study}' and '{entry.study_id}'")

    def add_entry(self, entry: ManifestEntry) -> None:
        check_type(entry, ManifestEntry, "Manifest entry")
        self._data.append(entry)
        try:
            self._check_hierarchy()
        except ValueError:
            self._data.pop()
            raise

    def get_by_index(self, index: int) -> ManifestEntry:
        try:
            return self._data[index]
        except IndexError:
            logger.error(f"Invalid manifest index: {index}")
            raise IndexError("Invalid manifest index!")

    def get_all_entries(self) -> List[ManifestEntry]:
        return self._data

    def get_split(self, split: str) -> 'Manifest':
        """Entries tagged with one split"""
        if split not in SPLITS:
            logger.error(f"Split must be one of {SPLITS}, got {split}")
            raise ValueError(f"Split must be one of {SPLITS}, got {split}")
        return Manifest([e for e in self._data if e.split == split])

    def get_study_ids(self) -> List[str]:
        """Study ids in first-appearance order"""
        return list(dict.fromkeys(e.study_id for e in self._data))

    def get_labels(self) -> List[int]:
        return [e.label for e in self._data]

    def to_dict(self) -> dict:
        return {"data": [e.to_dict() for e in self._data]}

    @classmethod
    def from_dict(cls, data: dict) -> 'Manifest':
        return cls([ManifestEntry.from_dict(e) for e in data["data"]])

    def __len__(self) -> int:
        return len(self._data)

    def __iter__(self):
        return iter(self._data)

    def __repr__(self) -> str:
        splits = {s: sum(e.split == s for e in self._data) for s in SPLITS}
        return f"Manifest(entries={len(self._data)}, splits={splits})"
