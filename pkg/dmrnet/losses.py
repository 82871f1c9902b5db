"""
Training objectives.

    L = L_TTL + alpha * L_DR + beta * L_HCR

L_TTL is the cross-entropy of the prediction made from the sampled embedding,
L_DR the KL divergence of N(mu, sigma^2) to N(0, 1) averaged over elements and batch,
L_HCR the cross-entropy restricted to samples whose combination is in the hard set, averaged over the full batch.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Union

import torch
import torch.nn.functional as F

from .combinations import CombinationMask
from .errors import RejectedInputError
from .mining import HardSet
from .models.dmr import DMROutput, GaussianEmbedding


@dataclass
class LossBreakdown:
    l_ttl: torch.Tensor
    l_dr: torch.Tensor
    l_hcr: torch.Tensor
    total: torch.Tensor
    alpha: float
    beta: float

    def to_dict(self) -> Dict[str, float]:
        return {
            "l_ttl": self.l_ttl.item(),
            "l_dr": self.l_dr.item(),
            "l_hcr": self.l_hcr.item(),
            "total": self.total.item(),
            "alpha": self.alpha,
            "beta": self.beta,
        }


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Cross-entropy with labels in [0, M - 1]; log-sum-exp stabilized.

    Args:
        logits (torch.Tensor): B x M scores, or a single vector of M scores.
        labels (torch.Tensor): B class indices, or a scalar.
    """
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
        labels = torch.as_tensor(labels).view(1)
    labels = torch.as_tensor(labels, device=logits.device).long()
    num_labels = logits.size(-1)
    if labels.numel() > 0 and (labels.min() < 0 or labels.max() >= num_labels):
        raise RejectedInputError(f"labels must be in [0, {num_labels - 1}], got {labels.tolist()}")
    return F.cross_entropy(logits, labels, reduction=reduction)


def distribution_regularizer(g: GaussianEmbedding) -> torch.Tensor:
    """-1/2 (1 + log sigma^2 - mu^2 - sigma^2), averaged over every element of every sample."""
    kl = -0.5 * (1 + 2 * g.log_sigma - g.mu.pow(2) - g.variance)
    return kl.mean()


def hard_combination_loss(
    pooled_sampled: torch.Tensor,
    labels: torch.Tensor,
    mask: Union[CombinationMask, torch.Tensor],
    hard_set: Optional[HardSet],
    predict: Callable[[torch.Tensor], torch.Tensor]
) -> torch.Tensor:
    """Cross-entropy of the shared classifier on samples whose combination is in the hard set, zero elsewhere.

    Args:
        pooled_sampled (torch.Tensor): B x C pooled sampled embeddings.
        labels (torch.Tensor): B class indices.
        mask (CombinationMask or torch.Tensor): one combination for the whole batch or B combination indices.
        hard_set (HardSet): the current hard set; None while the regularizer is inactive.
        predict (Callable): the task classifier, so that the regularizer shares its weights.

    Returns:
        (torch.Tensor): the batch mean, with non-hard samples contributing exactly zero.
    """
    if hard_set is None or len(hard_set.indices) == 0:
        return pooled_sampled.new_zeros(())
    if isinstance(mask, CombinationMask):
        mask_indices = torch.full((pooled_sampled.size(0),), mask.index, dtype=torch.long, device=pooled_sampled.device)
    else:
        mask_indices = mask.long()
    hard = torch.tensor(hard_set.indices, dtype=torch.long, device=pooled_sampled.device)
    in_hard_set = torch.isin(mask_indices, hard)
    if not in_hard_set.any():
        return pooled_sampled.new_zeros(())
    per_sample = cross_entropy(predict(pooled_sampled), labels, reduction="none")
    per_sample = torch.where(in_hard_set, per_sample, torch.zeros_like(per_sample))
    return per_sample.mean()


def total_loss(
    outputs: DMROutput,
    labels: torch.Tensor,
    mask_indices: torch.Tensor,
    hard_set: Optional[HardSet],
    alpha: float,
    beta: float,
    predict: Callable[[torch.Tensor], torch.Tensor]
) -> LossBreakdown:
    if labels.numel() == 0:
        raise RejectedInputError("cannot compute the loss of an empty batch")
    if alpha < 0 or beta < 0:
        raise RejectedInputError(f"loss weights must be non-negative, got alpha={alpha}, beta={beta}")
    l_ttl = cross_entropy(outputs.logits, labels)
    l_dr = distribution_regularizer(outputs.embedding)
    l_hcr = hard_combination_loss(outputs.pooled, labels, mask_indices, hard_set, predict)
    total = l_ttl + alpha * l_dr + beta * l_hcr
    return LossBreakdown(l_ttl=l_ttl, l_dr=l_dr, l_hcr=l_hcr, total=total, alpha=alpha, beta=beta)
