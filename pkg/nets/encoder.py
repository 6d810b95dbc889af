# nets/encoder.py
from typing import List, Sequence, Tuple

import torch
import torch.nn as nn

from base.clips import Clip
from utils.logging_setup import logger


class FactorizedBlock(nn.Module):
    """(2+1)D stage: spatial 1x3x3 convolution followed by a temporal kx1x1 convolution"""
    def __init__(self, in_channels: int, out_channels: int, spatial_stride: int, temporal_stride: int,
                 temporal_kernel: int = 3, batch_norm: bool = True):
        super().__init__()
        layers = [nn.Conv3d(in_channels, out_channels, kernel_size=(1, 3, 3),
                            stride=(1, spatial_stride, spatial_stride), padding=(0, 1, 1), bias=not batch_norm)]
        if batch_norm:
            layers.append(nn.BatchNorm3d(out_channels))
        layers.append(nn.ReLU(inplace=False))
        layers.append(nn.Conv3d(out_channels, out_channels, kernel_size=(temporal_kernel, 1, 1),
                                stride=(temporal_stride, 1, 1), padding=(temporal_kernel // 2, 0, 0),
                                bias=not batch_norm))
        if batch_norm:
            layers.append(nn.BatchNorm3d(out_channels))
        layers.append(nn.ReLU(inplace=False))
        self.block = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class Encoder(nn.Module):
    """Shared spatio-temporal trunk with a feature head and an ROI head.

    Input  x: [B, Ch, T_o, H_o, W_o]
    Output F: [B, D, T, H, W]   (feature head, linear last layer)
           M: [B, P, T, H, W]   (ROI head, linear last layer, may be negative)

    Attributes:
        in_channels (int): Ch
        feature_dim (int): D
        num_prototypes (int): P
        spatial_factor (int): product of spatial strides
        temporal_factor (int): product of temporal strides
    """
    def __init__(self, in_channels: int, feature_dim: int, num_prototypes: int,
                 widths: Sequence[int] = (16, 32, 64), spatial_strides: Sequence[int] = (2, 2, 2),
                 temporal_strides: Sequence[int] = (1, 2, 2), batch_norm: bool = True, temporal_kernel: int = 3):
        super().__init__()
        if not (len(widths) == len(spatial_strides) == len(temporal_strides)):
            logger.error("Encoder widths and strides must have one entry per stage")
            raise ValueError("Encoder widths and strides must have one entry per stage")
        if feature_dim < 2:
            logger.error(f"Feature depth must be at least 2, got {feature_dim}")
            raise ValueError(f"Feature depth must be at least 2, got {feature_dim}")
        self.in_channels = in_channels
        self.feature_dim = feature_dim
        self.num_prototypes = num_prototypes
        self.spatial_factor = 1
        self.temporal_factor = 1
        stages: List[nn.Module] = []
        channels = in_channels
        for width, s, t in zip(widths, spatial_strides, temporal_strides):
            stages.append(FactorizedBlock(channels, width, s, t, temporal_kernel, batch_norm))
            channels = width
            self.spatial_factor *= s
            self.temporal_factor *= t
        self.trunk = nn.Sequential(*stages)
        self.feature_head = nn.Sequential(
            nn.Conv3d(channels, feature_dim, kernel_size=1),
            nn.ReLU(inplace=False),
            nn.Conv3d(feature_dim, feature_dim, kernel_size=1),
        )
        self.roi_head = nn.Sequential(
            nn.Conv3d(channels, feature_dim, kernel_size=1),
            nn.ReLU(inplace=False),
            nn.Conv3d(feature_dim, feature_dim // 2, kernel_size=1),
            nn.ReLU(inplace=False),
            nn.Conv3d(feature_dim // 2, num_prototypes, kernel_size=1),
        )

    @classmethod
    def from_config(cls, config) -> 'Encoder':
        model = config.model
        image_mode = model.input_mode == "image"
        return cls(in_channels=config.data.channels, feature_dim=model.feature_dim,
                   num_prototypes=config.num_prototypes, widths=model.trunk_widths,
                   spatial_strides=model.spatial_strides, temporal_strides=model.temporal_strides,
                   batch_norm=model.batch_norm, temporal_kernel=1 if image_mode else 3)

    def output_shape(self, input_shape: Tuple[int, int, int]) -> Tuple[int, int, int]:
        """(T, H, W) of F and M for an input of (T_o, H_o, W_o)"""
        t, h, w = input_shape
        return t // self.temporal_factor, h // self.spatial_factor, w // self.spatial_factor

    def check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 5 or x.shape[1] != self.in_channels:
            logger.error(f"Encoder expected [B, {self.in_channels}, T, H, W], got {tuple(x.shape)}")
            raise ValueError(f"Encoder input shape mismatch: expected [B, {self.in_channels}, T, H, W], "
                             f"got {tuple(x.shape)}")
        t, h, w = x.shape[2:]
        if t % self.temporal_factor or h % self.spatial_factor or w % self.spatial_factor:
            logger.error(f"Input (T, H, W)=({t}, {h}, {w}) incompatible with strides "
                         f"{self.temporal_factor}x/{self.spatial_factor}x")
            raise ValueError(f"Encoder input shape mismatch: expected T divisible by {self.temporal_factor} "
                             f"and H, W divisible by {self.spatial_factor}, got (T, H, W)=({t}, {h}, {w})")

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        self.check_input(x)
        trunk = self.trunk(x)
        return self.feature_head(trunk), self.roi_head(trunk)


def extract(clip: Clip, encoder: Encoder) -> Tuple[torch.Tensor, torch.Tensor]:
    """F [H, W, T, D] and M [P, H, W, T] for a single clip, in the clip's axis order"""
    param = next(encoder.parameters())
    x = clip.to_tensor(param.dtype).unsqueeze(0).to(param.device)
    with torch.no_grad():
        features, occurrence = encoder(x)
    return features[0].permute(2, 3, 1, 0), occurrence[0].permute(0, 2, 3, 1)
