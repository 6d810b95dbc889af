# base/prototypes.py
from typing import Any, Dict, List, Optional, Union

import numpy as np

from base.base_entity import BaseEntity
from utils.validation import check_positive_int, check_type
from utils.logging_setup import logger

UNCERTAINTY = "uncertainty"

ClassTag = Union[int, str]

"""Prototype bank layout and push provenance

    Fixed layout for C classes with K prototypes each, followed by K
    uncertainty prototypes:

        [0, K)          class 0
        [K, 2K)         class 1
        ...
        [CK, CK + K)    uncertainty

    Head output row r pairs with the prototypes whose tag is r; the
    uncertainty row is row C.
    """


def _class_of(index: int, num_classes: int, per_class: int, with_uncertainty: bool) -> ClassTag:
    total = num_classes * per_class + (per_class if with_uncertainty else 0)
    if isinstance(index, bool) or not isinstance(index, (int, np.integer)):
        logger.error(f"Prototype index must be an integer, got {type(index)}")
        raise TypeError(f"Prototype index must be an integer, got {type(index)}")
    if not 0 <= index < total:
        logger.error(f"Prototype index {index} out of range for a bank of {total} prototypes")
        raise IndexError(f"Prototype index {index} out of range [0, {total})")
    c = int(index) // per_class
    return UNCERTAINTY if c >= num_classes else c


def prototype_class_of(index: int, config) -> ClassTag:
    """Return the class tag of a prototype index under the configured bank layout"""
    return _class_of(index, config.num_classes, config.model.num_prototypes_per_class,
                     config.model.use_uncertainty)


class Provenance(BaseEntity):
    """Training clip a prototype was last pushed onto"""
    def __init__(self, clip_id: str, epoch: int, label: int):
        self.clip_id = clip_id
        self.epoch = int(epoch)
        self.label = int(label)

    def to_dict(self) -> dict:
        return {"clip_id": self.clip_id, "epoch": self.epoch, "label": self.label}

    @classmethod
    def from_dict(cls, data: dict) -> 'Provenance':
        return cls(clip_id=data["clip_id"], epoch=data["epoch"], label=data["label"])

    def __eq__(self, other) -> bool:
        return isinstance(other, Provenance) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"Provenance(clip_id='{self.clip_id}', epoch={self.epoch}, label={self.label})"


class PrototypeBank(BaseEntity):
    """P prototype vectors with their class assignment and push provenance.

    Attributes:
        num_classes (int): C
        per_class (int): K
        with_uncertainty (bool): whether the K uncertainty prototypes are present
        vectors (np.ndarray, optional): [P, D] snapshot of the prototype vectors
        provenance (list): per-prototype Provenance or None
    """
    def __init__(self, num_classes: int, per_class: int, with_uncertainty: bool = True,
                 vectors: Optional[np.ndarray] = None, provenance: Optional[List[Optional[Provenance]]] = None):
        check_positive_int(num_classes, "Number of classes")
        check_positive_int(per_class, "Prototypes per class")
        self.num_classes = num_classes
        self.per_class = per_class
        self.with_uncertainty = with_uncertainty
        self._vectors = None
        if vectors is not None:
            self.set_vectors(vectors)
        if provenance is not None:
            check_type(provenance, list, "Provenance")
            if len(provenance) != self.size:
                logger.error(f"Provenance list has {len(provenance)} entries, expected {self.size}")
                raise ValueError(f"Provenance list has {len(provenance)} entries, expected {self.size}")
        self._provenance: List[Optional[Provenance]] = provenance if provenance is not None else [None] * self.size

    @classmethod
    def from_config(cls, config) -> 'PrototypeBank':
        return cls(config.num_classes, config.model.num_prototypes_per_class, config.model.use_uncertainty)

    @property
    def size(self) -> int:
        """P"""
        return self.num_classes * self.per_class + (self.per_class if self.with_uncertainty else 0)

    @property
    def num_outputs(self) -> int:
        """Head rows: C (+1 for the uncertainty output)"""
        return self.num_classes + (1 if self.with_uncertainty else 0)

    def class_of(self, index: int) -> ClassTag:
        return _class_of(index, self.num_classes, self.per_class, self.with_uncertainty)

    def row_of(self, index: int) -> int:
        """Head output row paired with a prototype"""
        tag = self.class_of(index)
        return self.num_classes if tag == UNCERTAINTY else tag

    def get_assignment(self) -> List[ClassTag]:
        return [self.class_of(i) for i in range(self.size)]

    def get_class_indices(self, c: int) -> List[int]:
        if not 0 <= c < self.num_classes:
            logger.error(f"Class {c} out of range for {self.num_classes} classes")
            raise IndexError(f"Class {c} out of range for {self.num_classes} classes")
        return list(range(c * self.per_class, (c + 1) * self.per_class))

    def get_uncertainty_indices(self) -> List[int]:
        if not self.with_uncertainty:
            return []
        start = self.num_classes * self.per_class
        return list(range(start, start + self.per_class))

    def output_identity(self) -> np.ndarray:
        """[num_outputs, P] indicator: 1 where prototype p pairs with output row r"""
        identity = np.zeros((self.num_outputs, self.size), dtype=np.float64)
        for p in range(self.size):
            identity[self.row_of(p), p] = 1.0
        return identity

    def class_mask(self) -> np.ndarray:
        """[P, C] indicator of class membership; uncertainty prototypes have an all-zero row"""
        mask = np.zeros((self.size, self.num_classes), dtype=bool)
        for p in range(self.num_classes * self.per_class):
            mask[p, p // self.per_class] = True
        return mask

    def get_vectors(self) -> Optional[np.ndarray]:
        return self._vectors

    def set_vectors(self, vectors: np.ndarray) -> None:
        """Store a [P, D] snapshot; every vector must have nonzero norm"""
        vectors = np.asarray(vectors)
        if vectors.ndim != 2 or vectors.shape[0] != self.size:
            logger.error(f"Prototype vectors must have shape [{self.size}, D], got {vectors.shape}")
            raise ValueError(f"Prototype vectors must have shape [{self.size}, D], got {vectors.shape}")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0):
            zero = np.flatnonzero(norms == 0).tolist()
            logger.error(f"Prototype vectors {zero} have zero norm")
            raise ValueError(f"Prototype vectors {zero} have zero norm")
        self._vectors = vectors.copy()

    def get_provenance(self, index: int) -> Optional[Provenance]:
        self.class_of(index)
        return self._provenance[index]

    def set_provenance(self, index: int, provenance: Provenance) -> None:
        check_type(provenance, Provenance, "Provenance")
        self.class_of(index)
        self._provenance[index] = provenance

    def has_provenance(self) -> bool:
        """True when every prototype has been pushed at least once"""
        return all(p is not None for p in self._provenance)

    def to_dict(self) -> Dict[str, Any]:
        """Convert PrototypeBank to a dictionary for serialization"""
        return {
            "num_classes": self.num_classes,
            "per_class": self.per_class,
            "with_uncertainty": self.with_uncertainty,
            "assignment": self.get_assignment(),
            "vectors": self._vectors.tolist() if self._vectors is not None else None,
            "provenance": [p.to_dict() if p is not None else None for p in self._provenance],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PrototypeBank':
        """Create a PrototypeBank from a dictionary"""
        vectors = np.asarray(data["vectors"], dtype=np.float32) if data.get("vectors") is not None else None
        provenance = [Provenance.from_dict(p) if p is not None else None for p in data["provenance"]]
        return cls(num_classes=data["num_classes"], per_class=data["per_class"],
                   with_uncertainty=data["with_uncertainty"], vectors=vectors, provenance=provenance)

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        pushed = sum(p is not None for p in self._provenance)
        return (f"PrototypeBank(C={self.num_classes}, K={self.per_class}, "
                f"uncertainty={self.with_uncertainty}, pushed={pushed}/{self.size})")


class PushRecord(BaseEntity):
    """One prototype's projection: old and new vector, source clip and distance moved"""
    def __init__(self, index: int, tag: ClassTag, old_vector, new_vector, clip_id: str, label: int, distance: float):
        self.index = int(index)
        self.tag = tag
        self.old_vector = np.asarray(old_vector)
        self.new_vector = np.asarray(new_vector)
        self.clip_id = clip_id
        self.label = int(label)
        self.distance = float(distance)

    def to_dict(self) -> Dict[str, Any]:
        return {"index": self.index, "tag": self.tag, "old_vector": self.old_vector.tolist(),
                "new_vector": self.new_vector.tolist(), "clip_id": self.clip_id, "label": self.label,
                "distance": self.distance}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PushRecord':
        return cls(data["index"], data["tag"], np.asarray(data["old_vector"], dtype=np.float32),
                   np.asarray(data["new_vector"], dtype=np.float32), data["clip_id"], data["label"], data["distance"])

    def __repr__(self) -> str:
        return f"PushRecord(index={self.index}, tag={self.tag}, clip_id='{self.clip_id}', distance={self.distance:.6f})"


class PushReport(BaseEntity):
    """All push records of one push, indexed by prototype"""
    def __init__(self, epoch: int, records: Optional[List[PushRecord]] = None):
        self.epoch = int(epoch)
        self._data: List[PushRecord] = records if records is not None else []

    def add_record(self, record: PushRecord) -> None:
        check_type(record, PushRecord, "Push record")
        self._data.append(record)

    def get_by_index(self, index: int) -> PushRecord:
        try:
            return self._data[index]
        except IndexError:
            logger.error(f"Invalid push record index: {index}")
            raise IndexError("Invalid push record index!")

    def get_all_records(self) -> List[PushRecord]:
        return self._data

    def total_distance(self) -> float:
        return float(sum(r.distance for r in self._data))

    def max_distance(self) -> float:
        return max((r.distance for r in self._data), default=0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {"epoch": self.epoch, "total_distance": self.total_distance(),
                "records": [r.to_dict() for r in self._data]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PushReport':
        return cls(data["epoch"], [PushRecord.from_dict(r) for r in data["records"]])

    def __len__(self) -> int:
        return len(self._data)

    def __repr__(self) -> str:
        return f"PushReport(epoch={self.epoch}, prototypes={len(self._data)}, moved={self.total_distance():.6f})"
