import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from datasets import Dataset
from sklearn.metrics import accuracy_score, confusion_matrix
from transformers.utils import logging

from .combinations import enumerate_combinations
from .datasynth import ATTACK, BONAFIDE, to_tensors
from .errors import DegenerateChannelError, RejectedInputError, UndefinedMetricError

logger = logging.get_logger(__name__)

METRIC_KINDS = ("accuracy", "acer")


def accuracy(predictions: Sequence[int], truths: Sequence[int]) -> float:
    predictions, truths = np.asarray(predictions), np.asarray(truths)
    if predictions.size == 0 or predictions.shape != truths.shape:
        raise RejectedInputError(f"accuracy needs two non-empty label sequences of equal length, got {predictions.shape} and {truths.shape}")
    return float(accuracy_score(truths, predictions))


def acer(decisions: Sequence[int], truths: Sequence[int]) -> float:
    """Average classification error rate, (APCER + BPCER) / 2.

    APCER is the fraction of attacks (label 0) classified as bona fide (label 1),
    BPCER the fraction of bona fide samples classified as attacks.
    """
    decisions, truths = np.asarray(decisions), np.asarray(truths)
    if decisions.size == 0 or decisions.shape != truths.shape:
        raise RejectedInputError(f"acer needs two non-empty label sequences of equal length, got {decisions.shape} and {truths.shape}")
    if len(np.unique(truths)) < 2:
        raise UndefinedMetricError("ACER is undefined when only one class is present in the ground truth")
    cm = confusion_matrix(truths, decisions, labels=[ATTACK, BONAFIDE])
    apcer = cm[ATTACK, BONAFIDE] / cm[ATTACK].sum()
    bpcer = cm[BONAFIDE, ATTACK] / cm[BONAFIDE].sum()
    return float((apcer + bpcer) / 2)


def compute_metric(kind: str, predictions: Sequence[int], truths: Sequence[int]) -> float:
    if kind == "accuracy":
        return accuracy(predictions, truths)
    if kind == "acer":
        return acer(predictions, truths)
    raise RejectedInputError(f"unknown metric '{kind}', expected one of {METRIC_KINDS}")


@dataclass
class ChannelDistanceMatrix:
    """1 - cosine similarity between the channels of two feature maps, C x C (or batched ... x C x C)."""

    values: torch.Tensor
    intra: bool
    literal: bool = False


def channel_distance(
    f_m: torch.Tensor,
    f_n: torch.Tensor,
    intra: Optional[bool] = None,
    literal: bool = False
) -> ChannelDistanceMatrix:
    """Inter-channel distance between two feature maps.

    Channel rows of both maps are L2-normalized before the Gram product, so entry (a, b) is one minus the cosine
    similarity of channel a of f_m and channel b of f_n. With `literal=True` the raw Gram product is computed first
    and its rows are normalized instead.

    Args:
        f_m (torch.Tensor): C x S feature map (leading batch dimensions allowed).
        f_n (torch.Tensor): C' x S feature map.
        intra (bool): both maps come from the same modality; defaults to `f_m is f_n`.
        literal (bool): normalize the rows of the Gram matrix rather than the channels.
    """
    if f_m.size(-1) != f_n.size(-1):
        raise RejectedInputError(f"feature maps have different spatial sizes: {f_m.size(-1)} and {f_n.size(-1)}")
    if intra is None:
        intra = f_m is f_n
    if (f_m.norm(dim=-1) == 0).any() or (f_n.norm(dim=-1) == 0).any():
        raise DegenerateChannelError("a channel with zero norm has no direction")
    if literal:
        gram = f_m @ f_n.transpose(-1, -2)
        if (gram.norm(dim=-1) == 0).any():
            raise DegenerateChannelError("a row of the channel Gram matrix is zero")
        similarity = F.normalize(gram, dim=-1)
    else:
        similarity = F.normalize(f_m, dim=-1) @ F.normalize(f_n, dim=-1).transpose(-1, -2)
    values = (1 - similarity).clamp(0, 2)
    if intra and not literal:
        values = (values + values.transpose(-1, -2)) / 2
        values = values * (1 - torch.eye(values.size(-1), dtype=values.dtype, device=values.device))
    return ChannelDistanceMatrix(values, intra=intra, literal=literal)


@dataclass
class DiversityHistogram:
    counts: np.ndarray
    bin_edges: np.ndarray
    mean: float
    intra: bool
    literal: bool

    def to_csv(self, path: Union[str, Path]):
        """bin_left, bin_right, count; the mean and mode flags go to a JSON file next to it."""
        path = Path(path)
        table = pd.DataFrame({
            "bin_left": self.bin_edges[:-1],
            "bin_right": self.bin_edges[1:],
            "count": self.counts,
        })
        table.to_csv(path, index=False)
        sidecar = {
            "mean": self.mean,
            "bins": len(self.counts),
            "intra": self.intra,
            "literal": self.literal,
            "n_values": int(self.counts.sum()),
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def diversity_histogram(d: ChannelDistanceMatrix, bins: int = 20) -> DiversityHistogram:
    """Histogram of the distances over [0, 2]; the diagonal is left out in intra mode."""
    if bins < 1:
        raise RejectedInputError(f"need at least one bin, got {bins}")
    values = d.values.detach().cpu()
    C = values.size(-1)
    if d.intra:
        off_diagonal = ~torch.eye(C, dtype=torch.bool).expand_as(values)
        values = values[off_diagonal]
    values = values.flatten().to(torch.float64).numpy()
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 2.0))
    mean = float(values.mean()) if values.size > 0 else float("nan")
    return DiversityHistogram(counts=counts, bin_edges=edges, mean=mean, intra=d.intra, literal=d.literal)


@dataclass
class CombinationResult:
    index: int
    bits: str
    metric: float
    n_samples: int


@dataclass
class CombinationResultTable:
    """Metric of every modality combination plus their average."""

    metric_name: str
    rows: List[CombinationResult] = field(default_factory=list)
    config_hash: str = ""

    @property
    def average(self) -> float:
        return float(np.mean([r.metric for r in self.rows]))

    def as_dict(self) -> Dict[str, float]:
        d = {r.bits: r.metric for r in self.rows}
        d["average"] = self.average
        return d

    def to_dataframe(self) -> pd.DataFrame:
        records = [
            {"index": r.index, "bits": r.bits, "metric": r.metric, "n_samples": r.n_samples, "config_hash": self.config_hash}
            for r in self.rows
        ]
        records.append({
            "index": "average",
            "bits": "",
            "metric": self.average,
            "n_samples": sum(r.n_samples for r in self.rows),
            "config_hash": self.config_hash
        })
        return pd.DataFrame.from_records(records, columns=["index", "bits", "metric", "n_samples", "config_hash"])

    def to_csv(self, path: Union[str, Path]):
        self.to_dataframe().to_csv(path, index=False)

    def __str__(self):
        lines = [f"{'combination':>12} {self.metric_name:>10}"]
        lines += [f"{r.bits:>12} {r.metric:>10.4f}" for r in self.rows]
        lines.append(f"{'average':>12} {self.average:>10.4f}")
        return "\n".join(lines)


def _model_dtype(model) -> torch.dtype:
    return next(model.parameters()).dtype


def per_combination_eval(
    model,
    dataset: Dataset,
    metric: str = "accuracy",
    batch_size: int = 256,
    config_hash: str = ""
) -> CombinationResultTable:
    """Runs the inference path under every modality combination and scores each one.

    Args:
        model (DMRNet): trained model; it is switched to eval mode.
        dataset (Dataset): rows with modality_0..modality_{V-1} and labels.
        metric (str): 'accuracy' or 'acer' (binary datasets only).
        batch_size (int): samples per forward pass.
        config_hash (str): written next to every row.
    """
    if metric not in METRIC_KINDS:
        raise RejectedInputError(f"unknown metric '{metric}', expected one of {METRIC_KINDS}")
    if len(dataset) == 0:
        raise RejectedInputError("cannot evaluate on an empty dataset")
    if metric == "acer" and model.num_labels != 2:
        raise RejectedInputError(f"ACER needs a binary classifier, the model has {model.num_labels} classes")
    inputs, labels = to_tensors(dataset, dtype=_model_dtype(model))
    table = CombinationResultTable(metric_name=metric, config_hash=config_hash)
    model.eval()
    with torch.no_grad():
        for mask in enumerate_combinations(model.num_modalities):
            predictions = []
            for start in range(0, len(labels), batch_size):
                batch = [x[start:start + batch_size] for x in inputs]
                predictions.append(model.forward_infer(batch, mask).logits.argmax(-1))
            predictions = torch.cat(predictions)
            value = compute_metric(metric, predictions.numpy(), labels.numpy())
            table.rows.append(CombinationResult(mask.index, mask.to_bitstring(), value, len(labels)))
    return table


def channel_diversity(
    model,
    dataset: Dataset,
    m: int,
    n: int,
    bins: int = 20,
    literal: bool = False,
    max_samples: Optional[int] = None
) -> DiversityHistogram:
    """Distance histogram between the encoder feature maps of modalities m and n, pooled over samples.

    m == n gives the intra-modality diversity of one encoder, m != n the inter-modality diversity.
    """
    V = model.num_modalities
    if not (0 <= m < V and 0 <= n < V):
        raise RejectedInputError(f"modalities must be in [0, {V - 1}], got m={m}, n={n}")
    if max_samples is not None:
        dataset = dataset.select(range(min(max_samples, len(dataset))))
    inputs, _ = to_tensors(dataset, dtype=_model_dtype(model))
    model.eval()
    with torch.no_grad():
        f_m = model.encode_modality(m, inputs[m])
        f_n = f_m if m == n else model.encode_modality(n, inputs[n])
        d = channel_distance(f_m, f_n, intra=(m == n), literal=literal)
    return diversity_histogram(d, bins)
