# nets/protoasnet.py
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from base.clips import Clip
from base.outputs import ModelOutput, normalize_outputs
from base.prototypes import PrototypeBank
from nets.encoder import Encoder
from nets.proto_layer import PrototypeLayer
from utils.diagnostics import Diagnostics
from utils.logging_setup import logger


@dataclass
class ForwardPass:
    """Every intermediate of one batched forward pass"""
    features: torch.Tensor      # [B, D, T, H, W]
    occurrence: torch.Tensor    # [B, P, T, H, W]
    pooled: torch.Tensor        # [B, P, D]
    similarities: torch.Tensor  # [B, P]
    logits: torch.Tensor        # [B, C+1] (C without uncertainty)
    class_probs: torch.Tensor   # [B, C]
    joint_probs: torch.Tensor   # [B, C+1]
    alpha: torch.Tensor         # [B]


class ProtoASNet(nn.Module):
    """Encoder -> occurrence pooling -> prototype similarity -> linear head -> output normalization"""
    def __init__(self, encoder: Encoder, prototypes: PrototypeLayer, output_normalization: str = "joint",
                 input_mode: str = "video"):
        super().__init__()
        if encoder.num_prototypes != prototypes.num_prototypes or encoder.feature_dim != prototypes.feature_dim:
            logger.error("Encoder and prototype layer disagree on D or P")
            raise ValueError(f"Encoder (D={encoder.feature_dim}, P={encoder.num_prototypes}) and prototype layer "
                             f"(D={prototypes.feature_dim}, P={prototypes.num_prototypes}) disagree")
        self.encoder = encoder
        self.prototypes = prototypes
        self.output_normalization = output_normalization
        self.input_mode = input_mode
        self.diagnostics = Diagnostics()

    @classmethod
    def from_config(cls, config) -> 'ProtoASNet':
        bank = PrototypeBank.from_config(config)
        model = cls(Encoder.from_config(config), PrototypeLayer(bank, config.model.feature_dim),
                    output_normalization=config.model.output_normalization, input_mode=config.model.input_mode)
        logger.info(f"Built model: P={bank.size}, D={config.model.feature_dim}, "
                    f"uncertainty={bank.with_uncertainty}, input_mode={config.model.input_mode}")
        return model

    @property
    def bank(self) -> PrototypeBank:
        return self.prototypes.bank

    @property
    def has_uncertainty(self) -> bool:
        return self.bank.with_uncertainty

    def select_frames(self, x: torch.Tensor, frame_index: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Image mode feeds one frame per clip: the given indices, or the mid-cycle frame"""
        if self.input_mode != "image" or x.shape[2] == 1:
            return x
        if frame_index is None:
            return x[:, :, x.shape[2] // 2: x.shape[2] // 2 + 1]
        index = frame_index.to(x.device).view(-1, 1, 1, 1, 1).expand(-1, x.shape[1], 1, x.shape[3], x.shape[4])
        return torch.gather(x, 2, index)

    def occurrence(self, x: torch.Tensor) -> torch.Tensor:
        """M only (used by the transformation-consistency loss)"""
        return self.encoder(x)[1]

    def forward(self, x: torch.Tensor) -> ForwardPass:
        return self.from_maps(*self.encoder(x))

    def from_maps(self, features: torch.Tensor, occurrence: torch.Tensor) -> ForwardPass:
        """Everything after the encoder, for F and M computed elsewhere"""
        pooled, sims, logits = self.prototypes(features, occurrence, self.diagnostics)
        class_probs, joint_probs, alpha = normalize_outputs(logits, self.output_normalization, self.has_uncertainty)
        return ForwardPass(features, occurrence, pooled, sims, logits, class_probs, joint_probs, alpha)


def model_forward(clip: Clip, model: ProtoASNet) -> ModelOutput:
    """Single-clip inference in eval mode"""
    param = next(model.parameters())
    x = model.select_frames(clip.to_tensor(param.dtype).unsqueeze(0).to(param.device))
    was_training = model.training
    model.eval()
    with torch.no_grad():
        result = model(x)
    model.train(was_training)
    return ModelOutput(similarities=result.similarities[0].cpu().numpy(), logits=result.logits[0].cpu().numpy(),
                       class_probs=result.class_probs[0].cpu().numpy(),
                       joint_probs=result.joint_probs[0].cpu().numpy(), alpha=float(result.alpha[0]))
