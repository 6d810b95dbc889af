# nets/losses.py
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from nets.transforms import AffineTransform, warp
from utils.diagnostics import Diagnostics
from utils.logging_setup import logger

ALPHA_EPS = 1e-7
PROB_FLOOR = 1e-12


@dataclass
class LossBreakdown:
    abs: float
    clst: float
    sep: float
    orth: float
    trns: float
    norm: float
    total: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _as_onehot(target: torch.Tensor, num_classes: int, dtype: torch.dtype) -> torch.Tensor:
    if target.dtype in (torch.int64, torch.int32, torch.int16, torch.uint8):
        return F.one_hot(target.long(), num_classes).to(dtype)
    return target.to(dtype)


def abstention_loss(class_probs: torch.Tensor, alpha: torch.Tensor, target: torch.Tensor, lambda_abs: float,
                    diagnostics: Optional[Diagnostics] = None) -> torch.Tensor:
    """CrsEnt((1 - alpha) * y_hat + alpha * y, y) - lambda_abs * log(1 - alpha), averaged over the batch.

    Args:
        class_probs (torch.Tensor): y_hat, [C] or [B, C]
        alpha (torch.Tensor): scalar or [B]
        target (torch.Tensor): integer labels or one-hot rows
        lambda_abs (float): abstention penalty weight
    """
    onehot = _as_onehot(target, class_probs.shape[-1], class_probs.dtype)
    saturated = alpha >= 1.0 - ALPHA_EPS
    if diagnostics is not None and bool(saturated.any()):
        diagnostics.increment("alpha_saturation", int(saturated.sum()))
    alpha = alpha.clamp(max=1.0 - ALPHA_EPS).unsqueeze(-1)
    interpolated = (1.0 - alpha) * class_probs + alpha * onehot
    cross_entropy = -(onehot * interpolated.clamp(min=PROB_FLOOR).log()).sum(dim=-1)
    penalty = -lambda_abs * torch.log1p(-alpha.squeeze(-1))
    return (cross_entropy + penalty).mean()


def cluster_sep_losses(similarities: torch.Tensor, labels: torch.Tensor,
                       class_mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """(L_clst, L_sep) over class prototypes only, averaged over the batch.

    Args:
        similarities (torch.Tensor): g, [P] or [B, P]
        labels (torch.Tensor): class indices, scalar or [B]
        class_mask (torch.Tensor): [P, C] bool; uncertainty prototypes have all-False rows
    """
    sims = similarities if similarities.ndim == 2 else similarities.unsqueeze(0)
    labels = labels.reshape(-1).long()
    own = class_mask[:, labels].t()                     # [B, P]
    other = class_mask.any(dim=1).unsqueeze(0) & ~own   # class prototypes of other classes
    neg_inf = torch.finfo(sims.dtype).min
    clst = -sims.masked_fill(~own, neg_inf).max(dim=1).values
    sep = sims.masked_fill(~other, neg_inf).max(dim=1).values
    sep = torch.where(other.any(dim=1), sep, torch.zeros_like(sep))
    return clst.mean(), sep.mean()


def orthogonality_loss(vectors: torch.Tensor, diagnostics: Optional[Diagnostics] = None) -> torch.Tensor:
    """Sum of pairwise cosine similarities over i > j across the whole bank"""
    norms = vectors.norm(dim=1, keepdim=True)
    zero = norms.squeeze(1) == 0
    if diagnostics is not None and bool(zero.any()):
        diagnostics.increment("zero_norm_orthogonality", int(zero.sum()))
    unit = vectors / torch.where(norms == 0, torch.ones_like(norms), norms)
    gram = unit @ unit.t()
    return torch.triu(gram, diagonal=1).sum()


def transformation_loss(model, x: torch.Tensor, transforms: Sequence[AffineTransform],
                        occurrence: Optional[torch.Tensor] = None,
                        warped_occurrence: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean squared discrepancy between M(T(x)) and T(M(x)).

    T acts on every frame of x and, at map resolution, on every occurrence map.
    occurrence and warped_occurrence may carry already computed M(x) and M(T(x)).
    """
    if all(t.is_identity() for t in transforms):
        return x.new_zeros(())
    maps = model.occurrence(x) if occurrence is None else occurrence
    if warped_occurrence is None:
        warped_occurrence = model.occurrence(warp(x, transforms).clamp(0.0, 1.0))
    return F.mse_loss(warped_occurrence, warp(maps, transforms))


def head_norm_loss(weights: torch.Tensor, identity: torch.Tensor) -> torch.Tensor:
    """L1 norm of the off-class head entries; identity is the init pattern"""
    if weights.shape != identity.shape:
        logger.error(f"Head weights {tuple(weights.shape)} and identity {tuple(identity.shape)} differ in shape")
        raise ValueError(f"Head weights {tuple(weights.shape)} and identity {tuple(identity.shape)} differ in shape")
    return (weights.abs() * (1.0 - identity)).sum()


def total_loss(terms: Dict[str, torch.Tensor], weights: Dict[str, float]) -> Tuple[torch.Tensor, LossBreakdown]:
    """abs + sum of lambda_k * term_k; returns the differentiable total and a float breakdown"""
    missing = [k for k in ("abs", "clst", "sep", "orth", "trns", "norm") if k not in terms]
    if missing:
        logger.error(f"Missing loss terms: {missing}")
        raise KeyError(f"Missing loss terms: {missing}")
    for key, value in weights.items():
        if value < 0:
            logger.error(f"Loss weight '{key}' must be non-negative, got {value}")
            raise ValueError(f"Loss weight '{key}' must be non-negative, got {value}")
    total = terms["abs"]
    for key in ("clst", "sep", "orth", "trns", "norm"):
        total = total + weights[key] * terms[key]
    values = {k: float(v) for k, v in terms.items() if k in ("abs", "clst", "sep", "orth", "trns", "norm")}
    # float64 re-summation keeps the breakdown identity exact
    logged_total = values["abs"] + sum(weights[k] * values[k] for k in ("clst", "sep", "orth", "trns", "norm"))
    breakdown = LossBreakdown(total=logged_total, **values)
    return total, breakdown
