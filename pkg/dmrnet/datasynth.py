"""
Synthetic multimodal benchmark with known per-modality informativeness.

Every class y has a fixed shared latent code c_y and, for every modality v, a fixed modality-specific code u_{y,v}.
Modality v observes

    x_v = snr_v * (P_v c_y + Q_v u_{y,v}) / sqrt(2) + noise,    noise ~ N(0, I)

with random projections P_v, Q_v scaled so that each projected code has unit variance per dimension.
Lowering snr_v makes modality v, and every combination relying on it alone, harder.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd
import torch
from datasets import ClassLabel, Dataset, DatasetDict, Features, Sequence, Value
from transformers.utils import logging

from .errors import RejectedInputError

logger = logging.get_logger(__name__)

ATTACK = 0
BONAFIDE = 1


@dataclass
class SyntheticSpec:
    num_modalities: int = 3
    num_classes: int = 4
    input_dims: List[int] = field(default_factory=lambda: [16, 16, 16])
    snr: List[float] = field(default_factory=lambda: [0.4, 0.4, 0.1])
    shared_dim: int = 8
    specific_dim: int = 8
    train_size: int = 2000
    test_size: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.num_modalities < 1 or self.num_classes < 2:
            raise RejectedInputError(f"need V >= 1 and M >= 2, got V={self.num_modalities}, M={self.num_classes}")
        if len(self.input_dims) != self.num_modalities or len(self.snr) != self.num_modalities:
            raise RejectedInputError(f"input_dims and snr need one entry per modality (V={self.num_modalities})")
        if min(self.input_dims) < 1 or self.shared_dim < 1 or self.specific_dim < 1:
            raise RejectedInputError("all dimensions must be >= 1")
        if min(self.snr) <= 0:
            raise RejectedInputError(f"SNR multipliers must be > 0, got {self.snr}")
        if min(self.train_size, self.test_size) < self.num_classes:
            raise RejectedInputError(f"each split needs at least M={self.num_classes} samples")

    def to_dict(self) -> Dict:
        return asdict(self)

    @property
    def label_names(self) -> List[str]:
        if self.num_classes == 2:
            return ["attack", "bonafide"]
        return [f"class_{k}" for k in range(self.num_classes)]


def _features(spec: SyntheticSpec) -> Features:
    features = {f"modality_{v}": Sequence(Value("float64"), length=d) for v, d in enumerate(spec.input_dims)}
    features["labels"] = ClassLabel(names=spec.label_names)
    return Features(features)


def _sample_split(spec: SyntheticSpec, codes, size: int, g: torch.Generator) -> Dict:
    labels = torch.arange(size) % spec.num_classes
    labels = labels[torch.randperm(size, generator=g)]
    columns = {}
    for v, (shared, specific) in enumerate(codes):
        signal = spec.snr[v] * (shared[labels] + specific[labels]) / math.sqrt(2)
        noise = torch.randn(size, spec.input_dims[v], generator=g, dtype=torch.float64)
        columns[f"modality_{v}"] = (signal + noise).numpy()
    columns["labels"] = labels.numpy()
    return columns


def generate_dataset(spec: SyntheticSpec) -> DatasetDict:
    """Train and test splits, a pure function of the SyntheticSpec (seed included)."""
    g = torch.Generator().manual_seed(spec.seed)
    class_codes = torch.randn(spec.num_classes, spec.shared_dim, generator=g, dtype=torch.float64)
    codes = []
    for d in spec.input_dims:
        P = torch.randn(d, spec.shared_dim, generator=g, dtype=torch.float64) / math.sqrt(spec.shared_dim)
        Q = torch.randn(d, spec.specific_dim, generator=g, dtype=torch.float64) / math.sqrt(spec.specific_dim)
        specific_codes = torch.randn(spec.num_classes, spec.specific_dim, generator=g, dtype=torch.float64)
        codes.append((class_codes @ P.T, specific_codes @ Q.T))  # M x d each
    features = _features(spec)
    train = _sample_split(spec, codes, spec.train_size, g)
    test = _sample_split(spec, codes, spec.test_size, g)
    logger.info(f"generated {spec.train_size} train and {spec.test_size} test samples over {spec.num_modalities} modalities")
    return DatasetDict({
        "train": Dataset.from_dict({k: list(v) for k, v in train.items()}, features=features),
        "test": Dataset.from_dict({k: list(v) for k, v in test.items()}, features=features),
    })


def modality_columns(dataset: Dataset) -> List[str]:
    columns = [c for c in dataset.column_names if c.startswith("modality_")]
    return sorted(columns, key=lambda c: int(c.split("_")[1]))


def to_tensors(dataset: Dataset, dtype: torch.dtype = torch.float64) -> Tuple[List[torch.Tensor], torch.Tensor]:
    """Per-modality N x d_v tensors and the N labels."""
    columns = dataset.with_format("numpy")[:]
    inputs = [torch.tensor(np.stack(columns[c]).astype(np.float64), dtype=dtype) for c in modality_columns(dataset)]
    labels = torch.tensor(np.asarray(columns["labels"], dtype=np.int64))
    return inputs, labels


def class_balance(dataset: Dataset) -> Tuple[int, ...]:
    if len(dataset) == 0:
        raise RejectedInputError("empty dataset")
    num_classes = dataset.features["labels"].num_classes
    return tuple(int(c) for c in np.bincount(dataset.with_format("numpy")[:]["labels"], minlength=num_classes))


def export_dataset(datasets: DatasetDict, spec: SyntheticSpec, path: Union[str, Path]):
    """Writes a commented spec JSON line followed by a CSV body: split, label, then every modality vector flattened."""
    path = Path(path)
    frames = []
    for split, dataset in datasets.items():
        inputs, labels = to_tensors(dataset)
        table = {"split": [split] * len(labels), "label": labels.numpy()}
        for v, x in enumerate(inputs):
            for i in range(x.size(1)):
                table[f"modality_{v}_{i}"] = x[:, i].numpy()
        frames.append(pd.DataFrame(table))
    with path.open("w") as f:
        f.write("# " + json.dumps(spec.to_dict(), sort_keys=True) + "\n")
        pd.concat(frames, ignore_index=True).to_csv(f, index=False)
    logger.info(f"exported {sum(len(d) for d in datasets.values())} samples to {path}")
