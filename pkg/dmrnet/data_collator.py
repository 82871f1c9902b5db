from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import torch
from transformers.data.data_collator import DataCollatorMixin

from .combinations import DropoutPolicy, masks_to_indices, sample_dropout_masks
from .errors import RejectedInputError


@dataclass
class DataCollatorForModalityDropout(DataCollatorMixin):
    """
    Stacks multimodal examples into a batch and draws one modality dropout mask per example.

    Args:
        policy (DropoutPolicy, optional): how masks are drawn; without a policy no mask is added (evaluation batches).
        generator (torch.Generator, optional): the random source of the masks, owned by the training loop.
        dtype (torch.dtype): floating point type of the modality tensors.
        return_tensors (str): only "pt" is supported.

    Returns a dict with `inputs` (list of B x d_v tensors), `labels` (B), and when a policy is set
    `masks` (B x V 0/1 indicators) with their combination indices `mask_indices` (B).
    """

    policy: Optional[DropoutPolicy] = None
    generator: Optional[torch.Generator] = None
    dtype: torch.dtype = torch.float64
    return_tensors: str = "pt"

    def torch_call(self, examples: List[Dict[str, Any]]) -> Dict[str, Any]:
        modality_keys = sorted((k for k in examples[0] if k.startswith("modality_")), key=lambda k: int(k.split("_")[1]))
        batch = {
            "inputs": [torch.tensor([e[k] for e in examples], dtype=self.dtype) for k in modality_keys],
            "labels": torch.tensor([e["labels"] for e in examples], dtype=torch.long),
        }
        if self.policy is not None:
            if self.policy.num_modalities != len(modality_keys):
                raise RejectedInputError(f"dropout policy over {self.policy.num_modalities} modalities, examples have {len(modality_keys)}")
            masks = sample_dropout_masks(self.policy, len(examples), self.generator)
            batch["masks"] = masks
            batch["mask_indices"] = masks_to_indices(masks)
        return batch
