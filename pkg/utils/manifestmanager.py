# utils/manifestmanager.py
import json
import os
import shutil
from collections import OrderedDict
from typing import List, Tuple

import numpy as np
import torch
from torch.utils.data import Dataset

from base.clips import Clip, ClipRecord, Manifest, ManifestEntry
from nets.transforms import AffineTransform
from utils.media import read_frames, to_uint8, write_frames
from utils.seeding import derive_seed
from utils.logging_setup import logger

MANIFEST_NAME = "manifest.jsonl"
CACHE_SIZE = 256


class ManifestManager:
    """Class to control the on-disk dataset: clip frame folders plus a JSON-lines manifest.

    Layout: <root>/<study>/<cine>/<clip>/frame_%04d.png and <root>/manifest.jsonl
    """

    def __init__(self, root: str, clip_length: int = 32, frame_rate: float = 32.0, cache_size: int = CACHE_SIZE):
        """Initialize manifest manager

        Args:
            root (str): dataset root directory
            clip_length (int): frames per clip
            frame_rate (float): frame rate stored on loaded clips
            cache_size (int): decoded clips kept in memory, least recently used evicted first; 0 disables
        """
        if not isinstance(root, str) or not root:
            logger.error("root must be a non-empty string")
            raise TypeError("root must be a non-empty string!")
        self.root = root
        self.clip_length = clip_length
        self.frame_rate = frame_rate
        self.cache_size = cache_size
        self._cache: OrderedDict[str, np.ndarray] = OrderedDict()

    @classmethod
    def from_config(cls, config) -> 'ManifestManager':
        return cls(config.data.root, config.data.clip_length, config.data.frame_rate)

    @property
    def manifest_path(self) -> str:
        return os.path.join(self.root, MANIFEST_NAME)

    @staticmethod
    def relative_path(record: ClipRecord) -> str:
        return "/".join((record.study_id, record.cine_id, record.clip_id))

    # clips

    def write_clip(self, record: ClipRecord) -> ManifestEntry:
        """Write one clip as lossless grayscale PNG frames and return its manifest entry"""
        rel = self.relative_path(record)
        frames = to_uint8(record.clip.to_frames())
        write_frames(os.path.join(self.root, *rel.split("/")), frames)
        return ManifestEntry.from_record(record, rel)

    def load_clip(self, entry: ManifestEntry) -> Clip:
        """Read a clip's frames back into [0,1] voxels"""
        frames = self._cache.get(entry.clip_id)
        if frames is None:
            frames = read_frames(os.path.join(self.root, *entry.path.split("/")), self.clip_length)
            if self.cache_size > 0:
                self._cache[entry.clip_id] = frames
                if len(self._cache) > self.cache_size:
                    self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(entry.clip_id)
        return Clip.from_frames(frames, frame_rate=self.frame_rate)

    def load_record(self, entry: ManifestEntry) -> ClipRecord:
        return ClipRecord(self.load_clip(entry), label=entry.label, study_id=entry.study_id,
                          cine_id=entry.cine_id, clip_id=entry.clip_id, ambiguous=entry.ambiguous,
                          amplitude=entry.amplitude, severity=entry.severity)

    def clear_cache(self) -> None:
        self._cache.clear()

    # manifest

    def save_manifest(self, manifest: Manifest) -> str:
        """Write one canonical JSON object per line (sorted keys); byte-stable for equal manifests"""
        os.makedirs(self.root, exist_ok=True)
        tmp_path = self.manifest_path + ".tmp"
        with open(tmp_path, "w", encoding="utf-8", newline="\n") as f:
            for entry in manifest:
                f.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")
        os.replace(tmp_path, self.manifest_path)
        logger.info(f"Saved manifest with {len(manifest)} entries to '{self.manifest_path}'")
        return self.manifest_path

    def load_manifest(self) -> Manifest:
        """Load the manifest; malformed lines are a hard error"""
        entries = []
        try:
            with open(self.manifest_path, "r", encoding="utf-8") as f:
                for number, line in enumerate(f, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        entries.append(ManifestEntry.from_dict(json.loads(line)))
                    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                        logger.error(f"Invalid manifest line {number} in '{self.manifest_path}': {e}")
                        raise ValueError(f"Invalid manifest line {number}: {e}")
        except FileNotFoundError:
            logger.error(f"Manifest '{self.manifest_path}' not found")
            raise FileNotFoundError(f"Manifest '{self.manifest_path}' not found! Run generate-data first.")
        manifest = Manifest(entries)
        logger.info(f"Loaded {manifest} from '{self.manifest_path}'")
        return manifest

    def remove_dataset(self) -> None:
        """Delete the dataset root (partial-output cleanup)"""
        if os.path.isdir(self.root):
            shutil.rmtree(self.root, ignore_errors=True)
            logger.warning(f"Removed dataset directory '{self.root}'")
        self.clear_cache()

    def __repr__(self) -> str:
        return f"ManifestManager(root='{self.root}', cached={len(self._cache)})"


class ClipDataset(Dataset):
    """Torch view of a manifest split.

    Items are (clip [Ch, T, H, W], label, index, affine params [4], frame index).
    With augmentation on, the affine is drawn from (seed, epoch, index); the
    clip is returned unwarped so the consistency loss can apply the same transform.
    """
    def __init__(self, manager: ManifestManager, manifest: Manifest, augment: bool = False, seed: int = 0,
                 image_mode: bool = False):
        if len(manifest) == 0:
            logger.error("ClipDataset needs a non-empty manifest")
            raise ValueError("Dataset split is empty")
        self.manager = manager
        self.entries: List[ManifestEntry] = manifest.get_all_entries()
        self.augment = augment
        self.seed = seed
        self.image_mode = image_mode
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def transform_for(self, index: int) -> AffineTransform:
        if not self.augment:
            return AffineTransform.identity()
        return AffineTransform.sample(derive_seed(self.seed, self.epoch, index, "affine"))

    def frame_for(self, index: int, num_frames: int) -> int:
        if not self.image_mode:
            return 0
        if not self.augment:
            return num_frames // 2
        return derive_seed(self.seed, self.epoch, index, "frame") % num_frames

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> Tuple[torch.Tensor, int, int, torch.Tensor, int]:
        entry = self.entries[index]
        clip = self.manager.load_clip(entry)
        transform = self.transform_for(index)
        params = torch.tensor([transform.angle_deg, transform.scale, transform.offset_x, transform.offset_y],
                              dtype=torch.float64)
        return clip.to_tensor(), entry.label, index, params, self.frame_for(index, clip.num_frames)


def transforms_from_params(params: torch.Tensor) -> List[AffineTransform]:
    """Rebuild per-sample transforms from a collated [B, 4] parameter tensor"""
    return [AffineTransform(*(float(v) for v in row)) for row in params]
