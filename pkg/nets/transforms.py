# nets/transforms.py
import math
from dataclasses import asdict, dataclass
from typing import Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from base.clips import Clip
from utils.logging_setup import logger

MAX_ROTATION_DEG = 15.0
SCALE_RANGE = (0.7, 1.0)

"""Seeded affine augmentation shared by the input pipeline and the
    transformation-consistency loss.

    A transform is stored in normalized image coordinates ([-1, 1] on both
    axes), so the same parameters warp a 64x64 frame and an 8x8 occurrence
    map consistently. Frames are warped independently with one theta per clip.
    """


@dataclass(frozen=True)
class AffineTransform:
    """Rotation plus resized crop.

    Attributes:
        angle_deg (float): rotation in degrees
        scale (float): crop area as a fraction of the frame (side = sqrt(scale))
        offset_x (float): crop centre, normalized x
        offset_y (float): crop centre, normalized y
    """
    angle_deg: float = 0.0
    scale: float = 1.0
    offset_x: float = 0.0
    offset_y: float = 0.0

    @classmethod
    def identity(cls) -> 'AffineTransform':
        return cls()

    @classmethod
    def sample(cls, seed: int, max_rotation: float = MAX_ROTATION_DEG,
               scale_range: Tuple[float, float] = SCALE_RANGE) -> 'AffineTransform':
        """Draw rotation in [-max_rotation, max_rotation] and crop area in scale_range"""
        rng = np.random.default_rng(seed)
        angle = float(rng.uniform(-max_rotation, max_rotation))
        scale = float(rng.uniform(*scale_range))
        slack = 1.0 - math.sqrt(scale)
        offset_x = float(rng.uniform(-slack, slack)) if slack > 0 else 0.0
        offset_y = float(rng.uniform(-slack, slack)) if slack > 0 else 0.0
        return cls(angle, scale, offset_x, offset_y)

    def is_identity(self) -> bool:
        return self.angle_deg == 0.0 and self.scale == 1.0 and self.offset_x == 0.0 and self.offset_y == 0.0

    def theta(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """[2, 3] matrix mapping output coordinates to sampling coordinates"""
        side = math.sqrt(self.scale)
        rad = math.radians(self.angle_deg)
        cos, sin = math.cos(rad), math.sin(rad)
        return torch.tensor([[side * cos, -side * sin, self.offset_x],
                             [side * sin, side * cos, self.offset_y]], dtype=dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'AffineTransform':
        return cls(**data)


def warp(volume: torch.Tensor, transforms: Sequence[AffineTransform]) -> torch.Tensor:
    """Apply one transform per batch element to every frame of a [B, Ch, T, H, W] volume.

    Identity transforms return the input values exactly.
    """
    if volume.ndim != 5:
        logger.error(f"warp expects [B, Ch, T, H, W], got shape {tuple(volume.shape)}")
        raise ValueError(f"warp expects a [B, Ch, T, H, W] volume, got shape {tuple(volume.shape)}")
    if len(transforms) != volume.shape[0]:
        logger.error(f"warp got {len(transforms)} transforms for a batch of {volume.shape[0]}")
        raise ValueError(f"Expected {volume.shape[0]} transforms, got {len(transforms)}")
    if all(t.is_identity() for t in transforms):
        return volume.clone()

    b, ch, t, h, w = volume.shape
    theta = torch.stack([tr.theta(volume.dtype) for tr in transforms]).to(volume.device)
    theta = theta.repeat_interleave(t, dim=0)
    # fold time into the batch: [B*T, Ch, H, W]
    frames = volume.permute(0, 2, 1, 3, 4).reshape(b * t, ch, h, w)
    grid = F.affine_grid(theta, [b * t, ch, h, w], align_corners=False)
    warped = F.grid_sample(frames, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    warped = warped.reshape(b, t, ch, h, w).permute(0, 2, 1, 3, 4).contiguous()

    # identity members keep their exact values
    keep = torch.tensor([tr.is_identity() for tr in transforms], device=volume.device)
    if keep.any():
        warped = torch.where(keep.view(-1, 1, 1, 1, 1), volume, warped)
    return warped


def augment(clip: Clip, seed: int) -> Tuple[Clip, AffineTransform]:
    """Seeded rotation (+-15 deg) and resized crop (area 0.7-1.0), identical on every frame.

    Returns the augmented clip and the transform so the consistency loss can reuse it.
    """
    transform = AffineTransform.sample(seed)
    return apply_to_clip(clip, transform), transform


def apply_to_clip(clip: Clip, transform: AffineTransform) -> Clip:
    """Warp a single clip; output clamped to [0, 1]"""
    if transform.is_identity():
        return Clip(clip.voxels.copy(), frame_rate=clip.frame_rate)
    volume = clip.to_tensor().unsqueeze(0)
    warped = warp(volume, [transform]).clamp(0.0, 1.0)
    return Clip.from_tensor(warped[0], frame_rate=clip.frame_rate)
