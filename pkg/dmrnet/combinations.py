"""
Mask algebra for modality combinations.

A combination of V modalities is a Bernoulli vector delta = (delta_1, ..., delta_V) with at least one bit set.
Its index is j = sum_k 2^(k-1) * delta_k, so that modality k maps onto bit k-1 of j.
In logs and tables a mask is written as a bit-string in modality order: delta = [1, 0, 1] -> "101" (index 5).
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import torch
from transformers.utils import logging

from .errors import RejectedInputError

logger = logging.get_logger(__name__)

POLICY_KINDS = ("uniform", "bernoulli", "fixed")


@dataclass(frozen=True)
class CombinationMask:
    """A non-empty subset of the input modalities.

    Args:
        bits (Tuple[int, ...]): one 0/1 indicator per modality, in modality order.
    """

    bits: Tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) == 0:
            raise RejectedInputError("a combination mask needs at least one modality")
        if any(b not in (0, 1) for b in bits):
            raise RejectedInputError(f"mask bits must be 0 or 1, got {self.bits}")
        if sum(bits) == 0:
            raise RejectedInputError("the all-zero mask is not a valid model input")
        object.__setattr__(self, "bits", bits)

    @property
    def num_modalities(self) -> int:
        return len(self.bits)

    @property
    def index(self) -> int:
        return mask_to_index(self)

    def to_bitstring(self) -> str:
        return "".join(str(b) for b in self.bits)

    @classmethod
    def from_bitstring(cls, bitstring: str) -> "CombinationMask":
        if not bitstring or any(c not in "01" for c in bitstring):
            raise RejectedInputError(f"not a mask bit-string: '{bitstring}'")
        return cls(tuple(int(c) for c in bitstring))

    def as_tensor(self, dtype: torch.dtype = torch.float32, device=None) -> torch.Tensor:
        return torch.tensor(self.bits, dtype=dtype, device=device)

    def __str__(self):
        return self.to_bitstring()


def mask_to_index(mask: CombinationMask) -> int:
    """Index j = sum_k 2^(k-1) * delta_k of a combination, in [1, 2^V - 1]."""
    if not isinstance(mask, CombinationMask):
        mask = CombinationMask(tuple(mask))
    return sum(bit << k for k, bit in enumerate(mask.bits))


def index_to_mask(index: int, num_modalities: int) -> CombinationMask:
    """Inverse of `mask_to_index`: bit k-1 of the index gives delta_k."""
    if num_modalities < 1:
        raise RejectedInputError(f"need at least one modality, got V={num_modalities}")
    if not 1 <= index <= 2 ** num_modalities - 1:
        raise RejectedInputError(f"combination index {index} out of range [1, {2 ** num_modalities - 1}] for V={num_modalities}")
    return CombinationMask(tuple((index >> k) & 1 for k in range(num_modalities)))


def enumerate_combinations(num_modalities: int) -> List[CombinationMask]:
    """All 2^V - 1 non-empty combinations, by ascending index."""
    if num_modalities < 1:
        raise RejectedInputError(f"need at least one modality, got V={num_modalities}")
    return [index_to_mask(j, num_modalities) for j in range(1, 2 ** num_modalities)]


def masks_to_indices(masks: torch.Tensor) -> torch.Tensor:
    """Batched `mask_to_index` for a (B, V) tensor of 0/1 indicators."""
    num_modalities = masks.size(-1)
    weights = 2 ** torch.arange(num_modalities, device=masks.device)
    return (masks.long() * weights).sum(-1)


def indices_to_masks(indices: torch.Tensor, num_modalities: int) -> torch.Tensor:
    """Batched `index_to_mask`, returns a (B, V) long tensor."""
    shifts = torch.arange(num_modalities, device=indices.device)
    return (indices.long().unsqueeze(-1) >> shifts) & 1


@dataclass(frozen=True)
class DropoutPolicy:
    """How modality dropout masks are drawn during training.

    Args:
        kind (str): 'uniform' draws each of the 2^V - 1 non-empty combinations with equal probability,
            'bernoulli' keeps each modality independently with probability p and redraws the all-zero outcome,
            'fixed' always returns `mask`.
        num_modalities (int): V.
        p (float): the probability that a modality is present under the 'bernoulli' policy.
        mask (CombinationMask): the mask returned by the 'fixed' policy.
    """

    kind: str
    num_modalities: int
    p: float = 0.5
    mask: Optional[CombinationMask] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise RejectedInputError(f"unknown dropout policy '{self.kind}', expected one of {POLICY_KINDS}")
        if self.num_modalities < 1:
            raise RejectedInputError(f"need at least one modality, got V={self.num_modalities}")
        if self.kind == "bernoulli" and not 0.0 < self.p <= 1.0:
            raise RejectedInputError(f"bernoulli keep probability must be in (0, 1], got {self.p}")
        if self.kind == "fixed":
            if self.mask is None:
                raise RejectedInputError("the fixed dropout policy requires a mask")
            if self.mask.num_modalities != self.num_modalities:
                raise RejectedInputError(f"fixed mask {self.mask} does not have {self.num_modalities} modalities")


def sample_dropout_masks(policy: DropoutPolicy, batch_size: int, generator: torch.Generator) -> torch.Tensor:
    """Draws one mask per sample as a (batch_size, V) long tensor of 0/1 indicators."""
    V = policy.num_modalities
    if policy.kind == "uniform":
        indices = torch.randint(1, 2 ** V, (batch_size,), generator=generator)
        return indices_to_masks(indices, V)
    if policy.kind == "bernoulli":
        probs = torch.full((batch_size, V), policy.p, dtype=torch.float64)
        masks = torch.bernoulli(probs, generator=generator).long()
        empty = masks.sum(-1) == 0
        # rejection: redraw the rows without any modality
        while empty.any():
            redrawn = torch.bernoulli(probs[empty], generator=generator).long()
            masks[empty] = redrawn
            empty = masks.sum(-1) == 0
        return masks
    return policy.mask.as_tensor(dtype=torch.long).unsqueeze(0).expand(batch_size, V).clone()


def sample_dropout_mask(policy: DropoutPolicy, generator: torch.Generator) -> CombinationMask:
    """Draws a single mask under the policy."""
    bits = sample_dropout_masks(policy, 1, generator)[0]
    return CombinationMask(tuple(bits.tolist()))


def apply_mask(
    modality_embeddings: Sequence[torch.Tensor],
    mask: Union[CombinationMask, torch.Tensor]
) -> List[torch.Tensor]:
    """Zeroes the embeddings of the dropped modalities.

    Args:
        modality_embeddings (Sequence[torch.Tensor]): V feature maps, each of shape B x C x S.
        mask (CombinationMask or torch.Tensor): a single mask applied to the whole batch or a B x V tensor of per-sample masks.

    Returns:
        (List[torch.Tensor]): embedding v multiplied by delta_v.
    """
    V = len(modality_embeddings)
    if isinstance(mask, CombinationMask):
        if mask.num_modalities != V:
            raise RejectedInputError(f"mask {mask} has {mask.num_modalities} modalities but {V} embeddings were given")
        return [r * float(bit) for r, bit in zip(modality_embeddings, mask.bits)]
    if mask.size(-1) != V:
        raise RejectedInputError(f"mask of shape {tuple(mask.shape)} does not match {V} embeddings")
    masked = []
    for v, r in enumerate(modality_embeddings):
        delta = mask[..., v].to(r.dtype)
        if delta.dim() > 0:
            if delta.size(0) != r.size(0):
                raise RejectedInputError(f"{delta.size(0)} masks for a batch of {r.size(0)}")
            delta = delta.view(-1, *([1] * (r.dim() - 1)))
        masked.append(r * delta)
    return masked
