# nets/proto_layer.py
from typing import Optional, Tuple

import torch
import torch.nn as nn

from base.prototypes import PrototypeBank
from utils.diagnostics import Diagnostics
from utils.logging_setup import logger


def pool(features: torch.Tensor, occurrence: torch.Tensor) -> torch.Tensor:
    """Occurrence-weighted average pooling.

    Args:
        features (torch.Tensor): F, [B, D, T, H, W]
        occurrence (torch.Tensor): M, [B, P, T, H, W]

    Returns:
        torch.Tensor: [B, P, D], f_p = mean over cells of |M_p| * F
    """
    if features.ndim != 5 or occurrence.ndim != 5 or features.shape[0] != occurrence.shape[0] \
            or features.shape[2:] != occurrence.shape[2:]:
        logger.error(f"pool shape mismatch: F {tuple(features.shape)} vs M {tuple(occurrence.shape)}")
        raise ValueError(f"pool expects F [B, D, T, H, W] and M [B, P, T, H, W] sharing B, T, H, W; "
                         f"got F {tuple(features.shape)} and M {tuple(occurrence.shape)}")
    cells = features.shape[2] * features.shape[3] * features.shape[4]
    return torch.einsum("bpthw,bdthw->bpd", occurrence.abs(), features) / cells


def similarity(f: torch.Tensor, p: torch.Tensor, diagnostics: Optional[Diagnostics] = None) -> torch.Tensor:
    """Shifted cosine similarity 0.5 * (1 + cos(f, p)) along the last axis.

    A zero-norm operand yields 0.5 and is counted under 'zero_norm_similarity'.
    """
    dot = (f * p).sum(dim=-1)
    denom = f.norm(dim=-1) * p.norm(dim=-1)
    degenerate = denom == 0
    safe = torch.where(degenerate, torch.ones_like(denom), denom)
    g = torch.where(degenerate, torch.full_like(dot, 0.5), 0.5 * (1.0 + dot / safe))
    if diagnostics is not None and bool(degenerate.any()):
        diagnostics.increment("zero_norm_similarity", int(degenerate.sum()))
    return g.clamp(0.0, 1.0)


def init_head(num_classes: int, per_class: int, with_uncertainty: bool = True,
              dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """[(C+1), P] weights: 1 between an output row and its prototypes, 0 elsewhere"""
    bank = PrototypeBank(num_classes, per_class, with_uncertainty)
    return torch.as_tensor(bank.output_identity(), dtype=dtype)


def head_forward(similarities: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """logits = w_h . g (no bias); works on [P] or [B, P]"""
    return similarities @ weights.t()


class PrototypeLayer(nn.Module):
    """Prototype vectors and the bias-free linear head.

    The bank carries the fixed class layout and push provenance; the
    learnable vectors live in prototype_vectors.
    """
    def __init__(self, bank: PrototypeBank, feature_dim: int):
        super().__init__()
        self.bank = bank
        self.feature_dim = feature_dim
        self.prototype_vectors = nn.Parameter(torch.rand(bank.size, feature_dim))
        self.head = nn.Linear(bank.size, bank.num_outputs, bias=False)
        with torch.no_grad():
            self.head.weight.copy_(init_head(bank.num_classes, bank.per_class, bank.with_uncertainty))
        self.register_buffer("head_identity", torch.as_tensor(bank.output_identity(), dtype=torch.float32))
        self.register_buffer("class_mask", torch.as_tensor(bank.class_mask()))

    @property
    def num_prototypes(self) -> int:
        return self.bank.size

    def forward(self, features: torch.Tensor, occurrence: torch.Tensor,
                diagnostics: Optional[Diagnostics] = None) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (pooled [B, P, D], similarities [B, P], logits [B, C+1])"""
        if occurrence.shape[1] != self.num_prototypes or features.shape[1] != self.feature_dim:
            logger.error(f"Prototype layer expected D={self.feature_dim}, P={self.num_prototypes}; "
                         f"got F {tuple(features.shape)}, M {tuple(occurrence.shape)}")
            raise ValueError(f"Prototype layer shape mismatch: expected D={self.feature_dim} and "
                             f"P={self.num_prototypes}, got F {tuple(features.shape)}, M {tuple(occurrence.shape)}")
        pooled = pool(features, occurrence)
        sims = similarity(pooled, self.prototype_vectors.unsqueeze(0), diagnostics)
        return pooled, sims, self.head(sims)

    def contributions(self, similarities: torch.Tensor) -> torch.Tensor:
        """w_h[r, p] * g_p for every output row: [B, C+1, P]"""
        return self.head.weight.unsqueeze(0) * similarities.unsqueeze(1)

    def set_vectors(self, vectors: torch.Tensor) -> None:
        """Replace prototype vectors in place (push)"""
        if tuple(vectors.shape) != tuple(self.prototype_vectors.shape):
            logger.error(f"Prototype update has shape {tuple(vectors.shape)}, "
                         f"expected {tuple(self.prototype_vectors.shape)}")
            raise ValueError(f"Prototype update has shape {tuple(vectors.shape)}, "
                             f"expected {tuple(self.prototype_vectors.shape)}")
        with torch.no_grad():
            self.prototype_vectors.copy_(vectors)
