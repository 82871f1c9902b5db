"""
Per-combination variance bookkeeping and hard combination selection.

For combination j, d_j is the mean of sigma^2 over every element (channel and position) of every sample seen with that combination.
The V combinations with the largest d_j form the hard set.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch
from tqdm.auto import tqdm
from transformers.utils import logging

from .combinations import CombinationMask, enumerate_combinations, index_to_mask
from .errors import InsufficientStatisticsError, RejectedInputError

logger = logging.get_logger(__name__)


@dataclass(frozen=True)
class HardSet:
    indices: Tuple[int, ...]
    epoch_of_selection: int = -1

    def __post_init__(self):
        indices = tuple(sorted(int(j) for j in self.indices))
        if len(set(indices)) != len(indices) or any(j < 1 for j in indices):
            raise RejectedInputError(f"hard set members must be distinct combination indices, got {self.indices}")
        object.__setattr__(self, "indices", indices)

    def __contains__(self, index: int) -> bool:
        return index in self.indices

    def __len__(self):
        return len(self.indices)

    def to_dict(self) -> Dict:
        return {"indices": list(self.indices), "epoch_of_selection": self.epoch_of_selection}

    @classmethod
    def from_dict(cls, d: Optional[Dict]) -> Optional["HardSet"]:
        if d is None:
            return None
        return cls(tuple(d["indices"]), d["epoch_of_selection"])


class CombinationStats:
    """Running sums of sigma^2 and element counts, one slot per combination index (slot 0 unused).

    Sums are kept in float64 and counts in int64 whatever the model precision.
    Partial statistics of independent workers combine with `merge`.
    """

    def __init__(self, num_modalities: int):
        if num_modalities < 1:
            raise RejectedInputError(f"need at least one modality, got V={num_modalities}")
        self.num_modalities = num_modalities
        self.sums = torch.zeros(2 ** num_modalities, dtype=torch.float64)
        self.counts = torch.zeros(2 ** num_modalities, dtype=torch.int64)

    def update(self, mask_indices: torch.Tensor, log_sigma: torch.Tensor) -> "CombinationStats":
        log_sigma = log_sigma.detach().to(device="cpu", dtype=torch.float64)
        mask_indices = mask_indices.detach().to(device="cpu", dtype=torch.long).view(-1)
        per_sample = (2 * log_sigma).exp().flatten(1).sum(-1)  # B
        elements_per_sample = log_sigma[0].numel()
        self.sums.index_add_(0, mask_indices, per_sample)
        self.counts.index_add_(0, mask_indices, torch.full_like(mask_indices, elements_per_sample))
        return self

    def merge(self, other: "CombinationStats") -> "CombinationStats":
        if other.num_modalities != self.num_modalities:
            raise RejectedInputError("cannot merge statistics over different numbers of modalities")
        self.sums += other.sums
        self.counts += other.counts
        return self

    def reset(self):
        self.sums.zero_()
        self.counts.zero_()

    def variances(self) -> Dict[int, float]:
        return {
            j: (self.sums[j] / self.counts[j]).item()
            for j in range(1, 2 ** self.num_modalities)
            if self.counts[j] > 0
        }

    def mean_variance(self) -> float:
        """sigma^2 averaged over all elements seen, whatever their combination."""
        total = self.counts.sum()
        return (self.sums.sum() / total).item() if total > 0 else float("nan")

    def state_dict(self) -> Dict[str, torch.Tensor]:
        return {"sums": self.sums.clone(), "counts": self.counts.clone()}

    def load_state_dict(self, state: Dict[str, torch.Tensor]):
        self.sums = state["sums"].clone().to(torch.float64)
        self.counts = state["counts"].clone().to(torch.int64)


def update_stats(
    stats: CombinationStats,
    mask: Union[CombinationMask, torch.Tensor],
    log_sigma: torch.Tensor
) -> CombinationStats:
    """Adds sum(sigma^2) over C x S to the accumulator of each sample's combination.

    Args:
        stats (CombinationStats): the accumulators, updated in place.
        mask (CombinationMask or torch.Tensor): one combination for the whole batch or B combination indices.
        log_sigma (torch.Tensor): B x C x S.
    """
    if isinstance(mask, CombinationMask):
        mask = torch.full((log_sigma.size(0),), mask.index, dtype=torch.long)
    return stats.update(mask, log_sigma)


def combination_variances(stats: CombinationStats) -> Dict[int, float]:
    return stats.variances()


def select_hard_set(variances: Dict[int, float], num_modalities: int, epoch: int = -1) -> HardSet:
    """The V combinations with the largest d_j; ties go to the smaller index."""
    if len(variances) < num_modalities:
        raise InsufficientStatisticsError(
            f"{len(variances)} combinations have statistics, {num_modalities} are needed to select a hard set"
        )
    ranked = sorted(variances.items(), key=lambda item: (-item[1], item[0]))
    return HardSet(tuple(j for j, _ in ranked[:num_modalities]), epoch)


def refresh_schedule(
    epoch: int,
    warmup: int,
    stats: CombinationStats,
    previous: Optional[HardSet] = None
) -> Optional[HardSet]:
    """Hard set to use during `epoch`, computed from the statistics of the epoch that just finished.

    The accumulators are reset in every case.
    """
    if warmup < 0:
        raise RejectedInputError(f"warmup must be non-negative, got {warmup}")
    try:
        if epoch < warmup:
            return None
        try:
            hard_set = select_hard_set(stats.variances(), stats.num_modalities, epoch)
        except InsufficientStatisticsError as e:
            logger.warning(f"keeping the previous hard set at epoch {epoch}: {e}")
            return previous
        if previous is not None and previous.indices != hard_set.indices:
            logger.info(f"hard set changed at epoch {epoch}: {previous.indices} -> {hard_set.indices}")
        return hard_set
    finally:
        stats.reset()


def estimate_combination_variances(
    model,
    inputs: Sequence[torch.Tensor],
    batch_size: int = 256
) -> CombinationStats:
    """Variance statistics over a dataset seen under every combination, using the inference path.

    Args:
        model (DMRNet): the trained model, switched to eval mode.
        inputs (Sequence[torch.Tensor]): one N x d_v tensor per modality.
        batch_size (int): number of samples per forward pass.
    """
    V = len(inputs)
    stats = CombinationStats(V)
    n = inputs[0].size(0)
    model.eval()
    with torch.no_grad():
        for mask in tqdm(enumerate_combinations(V), desc="combinations"):
            for start in range(0, n, batch_size):
                batch = [x[start:start + batch_size] for x in inputs]
                out = model.forward_infer(batch, mask)
                update_stats(stats, mask, out.log_sigma)
    return stats


def variance_records(
    variances: Dict[int, float],
    stats: CombinationStats,
    hard_set: Optional[HardSet],
    epoch: int
) -> List[Dict]:
    """One row per combination with statistics, as written to variances.csv."""
    V = stats.num_modalities
    rows = []
    for j in range(1, 2 ** V):
        if j not in variances:
            continue
        rows.append({
            "epoch": epoch,
            "index": j,
            "bits": index_to_mask(j, V).to_bitstring(),
            "d_j": variances[j],
            "count": int(stats.counts[j]),
            "in_hard_set": hard_set is not None and j in hard_set,
        })
    return rows
