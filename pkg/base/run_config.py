# base/run_config.py
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from base.base_entity import BaseEntity
from utils.validation import (check_divides, check_list_type, check_non_empty_string, check_non_negative,
                              check_positive, check_positive_int, check_range)
from utils.logging_setup import logger

NORMALIZATION_MODES = {"joint", "separate"}
INPUT_MODES = {"video", "image"}
SPLITS = ("train", "val", "test")

"""Run configuration: one JSON document with sections

    data       GeneratorSpec (synthetic valve-motion benchmark + dataset root)
    model      ModelConfig (prototype layout, encoder trunk, output normalization)
    loss       LossConfig (regularization coefficients)
    train      TrainConfig (optimizer, schedule, push, determinism)
    eval       EvalConfig (explanation-quality conventions, aggregation threshold)
    explain    ExplainConfig (overlay rendering)
    ablation   AblationConfig (repetitions, evaluation split)

    Defaults
    (K=10, lambda_clst=0.8, lambda_sep=0.08, lambda_norm=1e-4, lambda_abs=0.3,
    lambda_orth=1e-2, lambda_trns=1e-3, 32-frame clips, push every 5 epochs).
    """


@dataclass
class GeneratorSpec:
    root: str = "data/synthetic"
    image_size: List[int] = field(default_factory=lambda: [64, 64])
    clip_length: int = 32
    num_classes: int = 3
    channels: int = 1
    frame_rate: float = 32.0
    amplitude_ranges: List[List[float]] = field(default_factory=lambda: [[60.0, 80.0], [35.0, 55.0], [5.0, 25.0]])
    gap_ranges: List[List[float]] = field(default_factory=lambda: [[55.0, 60.0], [25.0, 35.0]])
    speckle_intensity: List[float] = field(default_factory=lambda: [0.0, 0.35, 0.7])
    noise_scale: float = 0.15
    ambiguous_fraction: float = 0.2
    num_studies: int = 50
    cines_per_study: int = 2
    clips_per_cine: int = 2
    split_ratios: List[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    seed: int = 0

    def __post_init__(self):
        check_non_empty_string(self.root, "data.root")
        if len(self.image_size) != 2:
            logger.error(f"data.image_size must be [H, W], got {self.image_size}")
            raise ValueError(f"data.image_size must be [H, W], got {self.image_size}")
        for size in self.image_size:
            check_positive_int(size, "data.image_size")
        check_positive_int(self.clip_length, "data.clip_length")
        check_positive_int(self.channels, "data.channels")
        check_positive(self.frame_rate, "data.frame_rate")
        check_positive_int(self.num_classes, "data.num_classes")
        if self.num_classes != 3:
            logger.error(f"The valve-motion benchmark renders exactly 3 classes, got {self.num_classes}")
            raise ValueError(f"data.num_classes must be 3 for the synthetic benchmark, got {self.num_classes}")
        if len(self.amplitude_ranges) != self.num_classes or len(self.speckle_intensity) != self.num_classes:
            logger.error("data.amplitude_ranges and data.speckle_intensity need one entry per class")
            raise ValueError("data.amplitude_ranges and data.speckle_intensity need one entry per class")
        if len(self.gap_ranges) != self.num_classes - 1:
            logger.error("data.gap_ranges needs one entry per pair of adjacent classes")
            raise ValueError("data.gap_ranges needs one entry per pair of adjacent classes")
        self._validate_ranges()
        check_non_negative(self.noise_scale, "data.noise_scale")
        check_range(self.ambiguous_fraction, 0.0, 1.0, "data.ambiguous_fraction")
        check_positive_int(self.num_studies, "data.num_studies")
        check_positive_int(self.cines_per_study, "data.cines_per_study")
        check_positive_int(self.clips_per_cine, "data.clips_per_cine")
        validate_ratios(self.split_ratios)

    def _validate_ranges(self) -> None:
        """Class ranges must be disjoint and ordered by decreasing opening; gaps sit between neighbours"""
        for c, (low, high) in enumerate(self.amplitude_ranges):
            if not 0.0 <= low < high < 90.0:
                logger.error(f"Class {c} amplitude range [{low}, {high}] must satisfy 0 <= low < high < 90")
                raise ValueError(f"Class {c} amplitude range [{low}, {high}] must satisfy 0 <= low < high < 90")
        for c in range(self.num_classes - 1):
            upper_low, _ = self.amplitude_ranges[c]
            _, lower_high = self.amplitude_ranges[c + 1]
            if lower_high > upper_low:
                logger.error(f"Amplitude ranges of classes {c} and {c + 1} overlap")
                raise ValueError(f"Amplitude ranges of classes {c} and {c + 1} overlap")
            gap_low, gap_high = self.gap_ranges[c]
            if not lower_high <= gap_low < gap_high <= upper_low:
                logger.error(f"Gap [{gap_low}, {gap_high}] must lie between classes {c + 1} and {c}")
                raise ValueError(f"Gap [{gap_low}, {gap_high}] must lie between the ranges of classes {c + 1} and {c}")

    @property
    def total_clips(self) -> int:
        return self.num_studies * self.cines_per_study * self.clips_per_cine


@dataclass
class ModelConfig:
    num_prototypes_per_class: int = 10
    feature_dim: int = 64
    trunk_widths: List[int] = field(default_factory=lambda: [16, 32, 64])
    spatial_strides: List[int] = field(default_factory=lambda: [2, 2, 2])
    temporal_strides: List[int] = field(default_factory=lambda: [1, 2, 2])
    batch_norm: bool = True
    use_uncertainty: bool = True
    output_normalization: str = "joint"
    input_mode: str = "video"

    def __post_init__(self):
        check_positive_int(self.num_prototypes_per_class, "model.num_prototypes_per_class")
        check_positive_int(self.feature_dim, "model.feature_dim")
        if self.feature_dim < 2:
            logger.error("model.feature_dim must be at least 2 (the ROI head uses D/2 filters)")
            raise ValueError("model.feature_dim must be at least 2")
        if not (len(self.trunk_widths) == len(self.spatial_strides) == len(self.temporal_strides)) or not self.trunk_widths:
            logger.error("model.trunk_widths, spatial_strides and temporal_strides need one entry per stage")
            raise ValueError("model.trunk_widths, spatial_strides and temporal_strides need one entry per stage")
        check_list_type(self.trunk_widths, int, "model.trunk_widths")
        for width in self.trunk_widths:
            check_positive_int(width, "model.trunk_widths")
        for stride in list(self.spatial_strides) + list(self.temporal_strides):
            check_positive_int(stride, "model strides")
        if self.output_normalization not in NORMALIZATION_MODES:
            logger.error(f"model.output_normalization must be one of {NORMALIZATION_MODES}, got {self.output_normalization}")
            raise ValueError(f"model.output_normalization must be one of {NORMALIZATION_MODES}, got {self.output_normalization}")
        if self.input_mode not in INPUT_MODES:
            logger.error(f"model.input_mode must be one of {INPUT_MODES}, got {self.input_mode}")
            raise ValueError(f"model.input_mode must be one of {INPUT_MODES}, got {self.input_mode}")
        if self.input_mode == "image" and any(s != 1 for s in self.temporal_strides):
            logger.error("model.input_mode 'image' requires temporal strides of 1")
            raise ValueError("model.input_mode 'image' requires all temporal strides to be 1")

    @property
    def spatial_factor(self) -> int:
        factor = 1
        for stride in self.spatial_strides:
            factor *= stride
        return factor

    @property
    def temporal_factor(self) -> int:
        factor = 1
        for stride in self.temporal_strides:
            factor *= stride
        return factor


@dataclass
class LossConfig:
    lambda_abs: float = 0.3
    lambda_clst: float = 0.8
    lambda_sep: float = 0.08
    lambda_orth: float = 1e-2
    lambda_trns: float = 1e-3
    lambda_norm: float = 1e-4

    def __post_init__(self):
        for name, value in dataclasses.asdict(self).items():
            check_non_negative(value, f"loss.{name}")

    def weights(self) -> Dict[str, float]:
        """Coefficients of the weighted terms (the abstention term has weight 1)"""
        return {"clst": self.lambda_clst, "sep": self.lambda_sep, "orth": self.lambda_orth,
                "trns": self.lambda_trns, "norm": self.lambda_norm}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 8
    push_period: int = 5
    push_enabled: bool = True
    push_batch_size: int = 1
    restore_best: bool = True
    augment: bool = True
    seed: int = 0
    deterministic: bool = False
    num_workers: int = 0
    runs_root: str = "runs"

    def __post_init__(self):
        check_positive(self.learning_rate, "train.learning_rate")
        check_positive_int(self.epochs, "train.epochs")
        check_positive_int(self.batch_size, "train.batch_size")
        check_positive_int(self.push_period, "train.push_period")
        check_positive_int(self.push_batch_size, "train.push_batch_size")
        check_non_negative(self.num_workers, "train.num_workers")
        check_non_empty_string(self.runs_root, "train.runs_root")


@dataclass
class EvalConfig:
    split: str = "test"
    sparsity_coverage: float = 0.9
    diversity_top_k: int = 3
    alpha_threshold: Optional[float] = None
    batch_size: int = 8

    def __post_init__(self):
        if self.split not in SPLITS:
            logger.error(f"eval.split must be one of {SPLITS}, got {self.split}")
            raise ValueError(f"eval.split must be one of {SPLITS}, got {self.split}")
        check_range(self.sparsity_coverage, 1e-6, 1.0, "eval.sparsity_coverage")
        check_positive_int(self.diversity_top_k, "eval.diversity_top_k")
        if self.alpha_threshold is not None:
            check_range(self.alpha_threshold, 0.0, 1.0, "eval.alpha_threshold")
        check_positive_int(self.batch_size, "eval.batch_size")


@dataclass
class ExplainConfig:
    opacity: float = 0.45
    colormap: str = "jet"
    top_k: int = 3
    max_clips: Optional[int] = None
    gif_duration_ms: int = 80

    def __post_init__(self):
        check_range(self.opacity, 0.0, 1.0, "explain.opacity")
        check_non_empty_string(self.colormap, "explain.colormap")
        check_positive_int(self.top_k, "explain.top_k")
        if self.max_clips is not None:
            check_positive_int(self.max_clips, "explain.max_clips")
        check_positive_int(self.gif_duration_ms, "explain.gif_duration_ms")


@dataclass
class AblationConfig:
    repeats: int = 1
    split: str = "test"

    def __post_init__(self):
        check_positive_int(self.repeats, "ablation.repeats")
        if self.split not in SPLITS:
            logger.error(f"ablation.split must be one of {SPLITS}, got {self.split}")
            raise ValueError(f"ablation.split must be one of {SPLITS}, got {self.split}")


SECTIONS = {
    "data": GeneratorSpec,
    "model": ModelConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "explain": ExplainConfig,
    "ablation": AblationConfig,
}


def validate_ratios(ratios: List[float]) -> None:
    """Split ratios: three non-negative numbers summing to one"""
    if len(ratios) != len(SPLITS):
        logger.error(f"Split ratios need {len(SPLITS)} entries, got {ratios}")
        raise ValueError(f"Split ratios need {len(SPLITS)} entries (train, val, test), got {ratios}")
    for ratio in ratios:
        check_non_negative(ratio, "Split ratio")
    if abs(sum(ratios) - 1.0) > 1e-9:
        logger.error(f"Split ratios must sum to 1, got {ratios}")
        raise ValueError(f"Split ratios must sum to 1, got {sum(ratios)}")


class RunConfig(BaseEntity):
    """Complete run configuration with JSON (de)serialization and a stable hash"""
    def __init__(self, data: Optional[GeneratorSpec] = None, model: Optional[ModelConfig] = None,
                 loss: Optional[LossConfig] = None, train: Optional[TrainConfig] = None,
                 eval: Optional[EvalConfig] = None, explain: Optional[ExplainConfig] = None,
                 ablation: Optional[AblationConfig] = None):
        self.data = data if data is not None else GeneratorSpec()
        self.model = model if model is not None else ModelConfig()
        self.loss = loss if loss is not None else LossConfig()
        self.train = train if train is not None else TrainConfig()
        self.eval = eval if eval is not None else EvalConfig()
        self.explain = explain if explain is not None else ExplainConfig()
        self.ablation = ablation if ablation is not None else AblationConfig()
        self._validate_shapes()

    def _validate_shapes(self) -> None:
        """Encoder downsampling must divide the clip dimensions"""
        height, width = self.data.image_size
        check_divides(self.model.spatial_factor, height, "Clip height")
        check_divides(self.model.spatial_factor, width, "Clip width")
        if self.model.input_mode == "video":
            check_divides(self.model.temporal_factor, self.data.clip_length, "Clip length")

    @property
    def num_classes(self) -> int:
        return self.data.num_classes

    @property
    def num_prototypes(self) -> int:
        """P = C*K (+ K uncertainty prototypes)"""
        per_class = self.model.num_prototypes_per_class
        extra = per_class if self.model.use_uncertainty else 0
        return self.num_classes * per_class + extra

    @property
    def input_length(self) -> int:
        """Number of frames fed to the encoder"""
        return 1 if self.model.input_mode == "image" else self.data.clip_length

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON document"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def copy(self) -> 'RunConfig':
        return RunConfig.from_dict(self.to_dict())

    def to_dict(self) -> Dict[str, Any]:
        """Convert RunConfig to a dictionary for serialization"""
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        """Create a RunConfig from a (possibly partial) dictionary; unknown keys are rejected"""
        if not isinstance(data, dict):
            logger.error(f"Configuration must be a JSON object, got {type(data)}")
            raise TypeError(f"Configuration must be a JSON object, got {type(data)}")
        sections = {}
        for name, values in data.items():
            if name not in SECTIONS:
                logger.error(f"Unknown configuration section '{name}'")
                raise ValueError(f"Unknown configuration key '{name}'")
            if not isinstance(values, dict):
                logger.error(f"Configuration section '{name}' must be an object")
                raise TypeError(f"Configuration section '{name}' must be an object")
            section_cls = SECTIONS[name]
            known = {f.name for f in dataclasses.fields(section_cls)}
            for key in values:
                if key not in known:
                    logger.error(f"Unknown configuration key '{name}.{key}'")
                    raise ValueError(f"Unknown configuration key '{name}.{key}'")
            sections[name] = section_cls(**values)
        return cls(**sections)

    @classmethod
    def load(cls, path: str) -> 'RunConfig':
        """Load a RunConfig from a JSON file"""
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            logger.error(f"Config file '{path}' not found")
            raise FileNotFoundError(f"Config file '{path}' not found!")
        except json.JSONDecodeError as e:
            logger.error(f"Error decoding JSON from '{path}': {e}")
            raise ValueError(f"Invalid JSON in '{path}': {e}")
        config = cls.from_dict(data)
        logger.info(f"Loaded configuration from '{path}' (hash {config.config_hash()[:12]})")
        return config

    def save(self, path: str) -> None:
        """Write the configuration as an indented JSON document"""
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=4, sort_keys=True)
        logger.info(f"Saved configuration to '{path}'")

    def __repr__(self) -> str:
        return (f"RunConfig(C={self.num_classes}, K={self.model.num_prototypes_per_class}, "
                f"D={self.model.feature_dim}, P={self.num_prototypes}, epochs={self.train.epochs})")
