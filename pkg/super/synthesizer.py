# super/synthesizer.py
import math
import os
from abc import ABC
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from base.clips import Clip, ClipRecord, Manifest, ManifestEntry
from base.run_config import SPLITS, GeneratorSpec, validate_ratios
from utils.manifestmanager import ManifestManager
from utils.media import to_uint8
from utils.seeding import derive_seed
from utils.logging_setup import logger

BACKGROUND = 0.05
ANNULUS = 0.5
LEAFLET = 0.55
BLUR_SIGMA = 1.5
SPOTS_PER_LEAFLET = 6
ASYMMETRY = 0.08

"""Synthetic valve-motion benchmark

    Each clip shows a vessel annulus with two leaflets hinged on opposite
    sides of the ring. Over one cycle of T frames the leaflets open to their
    peak angle and close again; the peak (mean over both leaflets) is the
    clip's amplitude. Severity restricts the opening and adds bright
    calcification spots. Ambiguous studies draw their amplitude from the gap
    between two adjacent classes, carry a label drawn from that pair, and get
    a blurred, partly occluded leaflet region.
    """


def leaflet_trajectory(amplitude: float, num_frames: int, asymmetry: float = 0.0) -> np.ndarray:
    """Opening angles in degrees, shape [2, T]; leaflet peaks are amplitude * (1 -+ asymmetry)"""
    t = np.arange(num_frames, dtype=np.float64)
    phase = 0.5 * (1.0 - np.cos(2.0 * np.pi * t / num_frames))
    peaks = np.array([amplitude * (1.0 - asymmetry), amplitude * (1.0 + asymmetry)])
    return peaks[:, None] * phase[None, :]


def _segment_distance(xx: np.ndarray, yy: np.ndarray, start: Tuple[float, float],
                      end: Tuple[float, float]) -> np.ndarray:
    sx, sy = start
    dx, dy = end[0] - sx, end[1] - sy
    length_sq = dx * dx + dy * dy
    u = np.clip(((xx - sx) * dx + (yy - sy) * dy) / length_sq, 0.0, 1.0)
    return np.hypot(xx - (sx + u * dx), yy - (sy + u * dy))


@dataclass
class StudyPlan:
    study_id: str
    severity: int
    label: int
    ambiguous: bool
    gap: Optional[int]


class Synthesizer(ABC):
    """Super-class for generating the synthetic benchmark"""
    def __init__(self, manipulator: Optional['Manipulator'] = None):
        self._manipulator = manipulator
        logger.info("Initialized Synthesizer")

    # rendering

    def generate_clip(self, spec: GeneratorSpec, c: int, ambiguous: bool, seed: int,
                      study_id: str = "s0000", cine_id: Optional[str] = None, clip_id: Optional[str] = None,
                      label: Optional[int] = None, gap: Optional[int] = None) -> ClipRecord:
        """Render one clip of class c.

        Args:
            spec (GeneratorSpec): generator settings
            c (int): severity class in {0, 1, 2}
            ambiguous (bool): draw the amplitude from a gap next to c
            seed (int): clip seed; the same seed gives bit-identical voxels
            label (int, optional): label to attach; drawn from the gap's class pair when ambiguous and omitted
            gap (int, optional): gap index (between classes gap and gap+1); drawn when omitted
        """
        if isinstance(c, bool) or not isinstance(c, (int, np.integer)) or not 0 <= c < spec.num_classes:
            logger.error(f"Class must be in [0, {spec.num_classes}), got {c}")
            raise ValueError(f"Class must be in [0, {spec.num_classes}), got {c}")
        rng = np.random.default_rng(seed)
        if ambiguous:
            if gap is None:
                gap = self._choose_gap(c, spec.num_classes, rng)
            if gap not in (c - 1, c):
                logger.error(f"Gap {gap} is not adjacent to class {c}")
                raise ValueError(f"Gap {gap} is not adjacent to class {c}")
            low, high = spec.gap_ranges[gap]
            amplitude = float(rng.uniform(low, high))
            if label is None:
                label = int(gap + rng.integers(0, 2))
            # spot brightness interpolated across the gap so it does not reveal the label
            position = (high - amplitude) / (high - low)
            speckle = (1 - position) * spec.speckle_intensity[gap] + position * spec.speckle_intensity[gap + 1]
        else:
            low, high = spec.amplitude_ranges[c]
            amplitude = float(rng.uniform(low, high))
            label = c if label is None else label
            speckle = spec.speckle_intensity[c]

        frames = self._render(spec, amplitude, speckle, ambiguous, rng)
        # quantized so that the PNG round trip is exact
        frames = to_uint8(frames).astype(np.float32) / 255.0
        voxels = np.repeat(np.transpose(frames, (1, 2, 0))[..., None], spec.channels, axis=3)
        clip = Clip(voxels, frame_rate=spec.frame_rate, clip_length=spec.clip_length)
        cine_id = cine_id or f"{study_id}_c00"
        clip_id = clip_id or f"{cine_id}_k00"
        return ClipRecord(clip, label=label, study_id=study_id, cine_id=cine_id, clip_id=clip_id,
                          ambiguous=ambiguous, amplitude=amplitude, severity=c)

    @staticmethod
    def _choose_gap(c: int, num_classes: int, rng: np.random.Generator) -> int:
        if c == 0:
            return 0
        if c == num_classes - 1:
            return num_classes - 2
        return int(c - 1 + rng.integers(0, 2))

    def _render(self, spec: GeneratorSpec, amplitude: float, speckle: float, ambiguous: bool,
                rng: np.random.Generator) -> np.ndarray:
        """Frames [T, H, W] in [0, 1]"""
        height, width = spec.image_size
        size = min(height, width)
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        radius = 0.3 * size
        ring = max(1.0, 0.05 * size)
        thickness = max(0.8, 0.035 * size)
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

        base = np.full((height, width), BACKGROUND)
        ring_dist = np.abs(np.hypot(xx - cx, yy - cy) - radius)
        base += ANNULUS * np.exp(-0.5 * (ring_dist / ring) ** 2)

        angles = leaflet_trajectory(amplitude, spec.clip_length, ASYMMETRY)
        spot_positions = rng.uniform(0.2, 0.95, size=(2, SPOTS_PER_LEAFLET))
        spot_size = max(0.7, 0.025 * size)
        occlusion = self._occlusion_box(spec, rng) if ambiguous else None

        frames = np.empty((spec.clip_length, height, width), dtype=np.float64)
        for t in range(spec.clip_length):
            frame = base.copy()
            for side, hinge_x, direction in ((0, cx - radius, 1.0), (1, cx + radius, -1.0)):
                theta = math.radians(angles[side, t])
                tip = (hinge_x + direction * radius * math.cos(theta), cy - radius * math.sin(theta))
                dist = _segment_distance(xx, yy, (hinge_x, cy), tip)
                frame += LEAFLET * np.exp(-0.5 * (dist / thickness) ** 2)
                for s in spot_positions[side]:
                    px = hinge_x + (tip[0] - hinge_x) * s
                    py = cy + (tip[1] - cy) * s
                    frame += speckle * np.exp(-0.5 * (np.hypot(xx - px, yy - py) / spot_size) ** 2)
            if ambiguous:
                frame = gaussian_filter(frame, sigma=BLUR_SIGMA)
                y0, y1, x0, x1 = occlusion
                frame[y0:y1, x0:x1] = 0.5 * frame[y0:y1, x0:x1].mean() + 0.5 * ANNULUS * 0.5
            frames[t] = frame

        if spec.noise_scale > 0:
            shape = 1.0 / spec.noise_scale ** 2
            frames *= rng.gamma(shape, 1.0 / shape, size=frames.shape)
        return np.clip(frames, 0.0, 1.0)

    @staticmethod
    def _occlusion_box(spec: GeneratorSpec, rng: np.random.Generator) -> Tuple[int, int, int, int]:
        """Patch over the leaflet region (upper half of the ring, near one tip)"""
        height, width = spec.image_size
        box_h = max(1, int(round(0.2 * height)))
        box_w = max(1, int(round(0.25 * width)))
        y0 = int(rng.integers(int(0.25 * height), max(int(0.25 * height) + 1, int(0.5 * height) - box_h + 1)))
        x0 = int(rng.integers(int(0.2 * width), max(int(0.2 * width) + 1, int(0.8 * width) - box_w + 1)))
        return y0, y0 + box_h, x0, x0 + box_w

    @staticmethod
    def oracle_class(spec: GeneratorSpec, amplitude: float) -> int:
        """Threshold the generator's amplitude at the gap midpoints"""
        for c, (low, high) in enumerate(spec.gap_ranges):
            if amplitude >= 0.5 * (low + high):
                return c
        return spec.num_classes - 1

    # splitting

    @staticmethod
    def assign_splits(study_ids: Sequence[str], ratios: Sequence[float], seed: int) -> Dict[str, str]:
        """Shuffle studies with the seed and cut contiguous ranges (largest remainder, >= 1 per nonzero ratio)"""
        validate_ratios(list(ratios))
        ordered = sorted(set(study_ids))
        n = len(ordered)
        nonzero = [i for i, r in enumerate(ratios) if r > 0]
        if n < len(nonzero):
            logger.error(f"{n} studies cannot fill {len(nonzero)} non-empty splits")
            raise ValueError(f"Need at least {len(nonzero)} studies for ratios {list(ratios)}, got {n}")

        quotas = [r * n for r in ratios]
        counts = [int(math.floor(q + 1e-9)) for q in quotas]
        remainders = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
        for i in remainders[:n - sum(counts)]:
            counts[i] += 1
        for i in nonzero:
            if counts[i] == 0:
                donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
                counts[donor] -= 1
                counts[i] += 1

        order = np.random.default_rng(seed).permutation(n)
        assignment, start = {}, 0
        for split, count in zip(SPLITS, counts):
            for k in order[start:start + count]:
                assignment[ordered[k]] = split
            start += count
        return assignment

    def split_by_study(self, manifest: Manifest, ratios: Sequence[float], seed: int) -> Manifest:
        """Tag every entry with the split of its study"""
        assignment = self.assign_splits(manifest.get_study_ids(), ratios, seed)
        entries = []
        for entry in manifest:
            tagged = ManifestEntry.from_dict({**entry.to_dict(), "split": assignment[entry.study_id]})
            entries.append(tagged)
        counts = {s: sum(1 for v in assignment.values() if v == s) for s in SPLITS}
        logger.info(f"Split {len(assignment)} studies by study id: {counts}")
        return Manifest(entries)

    # dataset

    def plan_studies(self, spec: GeneratorSpec) -> List[StudyPlan]:
        """Per-study severity (round robin), ambiguity (chosen per split) and label"""
        study_ids = [f"s{i:04d}" for i in range(spec.num_studies)]
        assignment = self.assign_splits(study_ids, spec.split_ratios, spec.seed)
        ambiguous = set()
        if spec.ambiguous_fraction > 0:
            for split in SPLITS:
                members = [s for s in study_ids if assignment[s] == split]
                if not members:
                    continue
                count = min(len(members), max(1, int(round(spec.ambiguous_fraction * len(members)))))
                rng = np.random.default_rng(derive_seed(spec.seed, split, "ambiguous"))
                ambiguous.update(members[k] for k in rng.permutation(len(members))[:count])

        plans = []
        for i, study_id in enumerate(study_ids):
            severity = i % spec.num_classes
            if study_id in ambiguous:
                rng = np.random.default_rng(derive_seed(spec.seed, study_id, "study"))
                gap = self._choose_gap(severity, spec.num_classes, rng)
                plans.append(StudyPlan(study_id, severity, int(gap + rng.integers(0, 2)), True, gap))
            else:
                plans.append(StudyPlan(study_id, severity, severity, False, None))
        return plans

    def generate_dataset(self, spec: GeneratorSpec) -> Manifest:
        """Render every clip to <root>/<study>/<cine>/<clip>/ and write the split-tagged manifest"""
        manager = ManifestManager(spec.root, spec.clip_length, spec.frame_rate)
        if os.path.isdir(spec.root) and os.listdir(spec.root):
            if not os.path.exists(manager.manifest_path):
                logger.error(f"Refusing to overwrite non-dataset directory '{spec.root}'")
                raise ValueError(f"Output directory '{spec.root}' is not empty and holds no dataset manifest")
            manager.remove_dataset()

        jobs = []
        for plan in self.plan_studies(spec):
            for j in range(spec.cines_per_study):
                cine_id = f"{plan.study_id}_c{j:02d}"
                for k in range(spec.clips_per_cine):
                    jobs.append((plan, cine_id, f"{cine_id}_k{k:02d}"))

        def render(job):
            plan, cine_id, clip_id = job
            record = self.generate_clip(spec, plan.severity, plan.ambiguous, derive_seed(spec.seed, clip_id),
                                        study_id=plan.study_id, cine_id=cine_id, clip_id=clip_id,
                                        label=plan.label, gap=plan.gap)
            return manager.write_clip(record)

        try:
            with ThreadPoolExecutor() as executor:
                entries = list(executor.map(render, jobs))
            manifest = self.split_by_study(Manifest(entries), spec.split_ratios, spec.seed)
            manager.save_manifest(manifest)
        except BaseException as e:
            logger.error(f"Dataset generation failed, removing partial output: {e!r}")
            manager.remove_dataset()
            raise
        logger.info(f"Generated {len(manifest)} of {spec.total_clips} clips from {spec.num_studies} studies under '{spec.root}'")
        return manifest

    def __repr__(self) -> str:
        return "Synthesizer()"


class DefaultSynthesizer(Synthesizer):
    """Default implementation of Synthesizer"""
    def __init__(self, manipulator: Optional['Manipulator'] = None):
        super().__init__(manipulator)
        logger.info("Initialized DefaultSynthesizer")
