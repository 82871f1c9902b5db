"""
Experiment configuration.

One flat dataclass so that every key is also a command line flag.
The canonical form is the sorted-key JSON of all fields; its SHA-256 prefix is the config hash carried by every artifact.
"""
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Union

import torch
from transformers.utils import logging

from .combinations import CombinationMask, DropoutPolicy
from .datasynth import SyntheticSpec
from .errors import InvalidConfigError, RejectedInputError
from .models.dmr import DISTRIBUTION_LEVELS, DMRConfig
from .utils import canonical_json, sha256_hex

logger = logging.get_logger(__name__)

MODES = ("vanilla", "dmr", "dmr+hcr")
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class ExperimentConfig:
    # objective
    mode: str = field(default="dmr+hcr", metadata={"help": "vanilla: train on mu without regularizers; dmr: sampled embedding + L_DR; dmr+hcr: adds the hard combination regularizer.", "choices": list(MODES)})
    alpha: float = field(default=1e-3, metadata={"help": "Weight of the distribution regularizer."})
    beta: float = field(default=0.7, metadata={"help": "Weight of the hard combination regularizer."})
    zero_noise: bool = field(default=False, metadata={"help": "Use eps = 0 on the training path (s = mu)."})
    # architecture
    num_channels: int = field(default=16, metadata={"help": "Channels C of every feature map."})
    spatial_size: int = field(default=8, metadata={"help": "Spatial positions S of every feature map."})
    hidden_features: int = field(default=64, metadata={"help": "Hidden width of the modality encoders."})
    distribution_level: str = field(default="feature_map", metadata={"help": "Estimate the Gaussian on the fused feature map, on its average-pooled vector or on its attention-pooled vector.", "choices": list(DISTRIBUTION_LEVELS)})
    zero_init_sigma_head: bool = field(default=False, metadata={"help": "Initialize the log sigma head at zero (sigma = 1)."})
    log_sigma_bound: float = field(default=10.0, metadata={"help": "log sigma is clamped to [-bound, bound]."})
    # modality dropout
    dropout_policy: str = field(default="uniform", metadata={"help": "How training combinations are drawn.", "choices": ["uniform", "bernoulli", "fixed"]})
    dropout_probability: float = field(default=0.5, metadata={"help": "Probability that a modality is kept under the bernoulli policy."})
    fixed_mask: Optional[str] = field(default=None, metadata={"help": "Bit-string of the combination used by the fixed policy, e.g. 100."})
    # optimization
    learning_rate: float = field(default=0.05, metadata={"help": "SGD learning rate."})
    momentum: float = field(default=0.9, metadata={"help": "SGD momentum."})
    weight_decay: float = field(default=5e-4, metadata={"help": "SGD weight decay."})
    lr_warmup_epochs: int = field(default=0, metadata={"help": "Epochs of linear learning rate warm-up."})
    lr_milestones: List[int] = field(default_factory=list, metadata={"help": "Epochs at which the learning rate is divided by lr_decay_factor."})
    lr_decay_factor: float = field(default=10.0, metadata={"help": "Divisor applied at each milestone."})
    num_epochs: int = field(default=30, metadata={"help": "Training epochs."})
    batch_size: int = field(default=64, metadata={"help": "Training batch size."})
    hcr_warmup_epochs: int = field(default=5, metadata={"help": "Epochs before the hard combination regularizer becomes active."})
    # reproducibility
    seed: int = field(default=0, metadata={"help": "Seed of parameter initialization, dropout masks and eps draws."})
    data_seed: int = field(default=0, metadata={"help": "Seed of the synthetic benchmark."})
    dtype: str = field(default="float64", metadata={"help": "Floating point precision of the model.", "choices": list(DTYPES)})
    num_threads: int = field(default=0, metadata={"help": "Torch intra-op threads; 0 keeps the default."})
    # evaluation and outputs
    metric: str = field(default="accuracy", metadata={"help": "Per-combination metric.", "choices": ["accuracy", "acer"]})
    save_every_epochs: int = field(default=0, metadata={"help": "Also checkpoint every n epochs for resuming; 0 saves only at the end."})
    report_to_tensorboard: bool = field(default=False, metadata={"help": "Write loss scalars for TensorBoard."})
    # synthetic benchmark
    num_modalities: int = field(default=3, metadata={"help": "Number of modalities V."})
    num_classes: int = field(default=4, metadata={"help": "Number of classes M; 2 gives an attack/bonafide task."})
    input_dims: List[int] = field(default_factory=lambda: [16, 16, 16], metadata={"help": "Input dimension of each modality."})
    snr: List[float] = field(default_factory=lambda: [0.4, 0.4, 0.1], metadata={"help": "Signal-to-noise multiplier of each modality."})
    shared_dim: int = field(default=8, metadata={"help": "Dimension of the class code shared by all modalities."})
    specific_dim: int = field(default=8, metadata={"help": "Dimension of the modality-specific class codes."})
    train_size: int = field(default=2000, metadata={"help": "Training samples."})
    test_size: int = field(default=1000, metadata={"help": "Test samples."})

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidConfigError(f"alpha and beta must be >= 0, got alpha={self.alpha}, beta={self.beta}")
        if self.mode == "vanilla" and (self.alpha != 0 or self.beta != 0):
            logger.info("mode=vanilla: setting alpha=beta=0")
            self.alpha, self.beta = 0.0, 0.0
        if self.mode == "dmr" and self.beta != 0:
            logger.info("mode=dmr: setting beta=0")
            self.beta = 0.0
        if self.dtype not in DTYPES:
            raise InvalidConfigError(f"dtype must be one of {list(DTYPES)}, got '{self.dtype}'")
        if min(self.num_channels, self.spatial_size, self.hidden_features, self.num_epochs, self.batch_size) < 1:
            raise InvalidConfigError("architecture sizes, num_epochs and batch_size must be >= 1")
        if self.hcr_warmup_epochs < 0 or self.lr_warmup_epochs < 0 or self.save_every_epochs < 0:
            raise InvalidConfigError("warm-up lengths and save_every_epochs must be >= 0")
        if self.lr_decay_factor <= 0 or self.learning_rate <= 0:
            raise InvalidConfigError("learning_rate and lr_decay_factor must be > 0")
        if self.metric == "acer" and self.num_classes != 2:
            raise InvalidConfigError("the acer metric needs num_classes=2")
        try:
            self.synthetic_spec()
            self.dropout()
            model_config = self.model_config()
        except RejectedInputError as e:
            raise InvalidConfigError(str(e)) from e
        if self.batch_size == 1 and model_config.effective_spatial_size == 1:
            raise InvalidConfigError("batch_size=1 leaves batch norm a single value per channel; use batch_size >= 2 with one-position maps")

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]

    def model_config(self) -> DMRConfig:
        return DMRConfig(
            input_dims=self.input_dims,
            num_channels=self.num_channels,
            spatial_size=self.spatial_size,
            hidden_features=self.hidden_features,
            num_labels=self.num_classes,
            distribution_level=self.distribution_level,
            sample_embedding=self.mode != "vanilla",
            log_sigma_bound=self.log_sigma_bound,
            zero_init_sigma_head=self.zero_init_sigma_head,
        )

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            num_modalities=self.num_modalities,
            num_classes=self.num_classes,
            input_dims=list(self.input_dims),
            snr=list(self.snr),
            shared_dim=self.shared_dim,
            specific_dim=self.specific_dim,
            train_size=self.train_size,
            test_size=self.test_size,
            seed=self.data_seed,
        )

    def dropout(self) -> DropoutPolicy:
        mask = CombinationMask.from_bitstring(self.fixed_mask) if self.fixed_mask else None
        return DropoutPolicy(self.dropout_policy, self.num_modalities, p=self.dropout_probability, mask=mask)

    @property
    def hcr_active(self) -> bool:
        return self.mode == "dmr+hcr" and self.beta > 0

    @property
    def config_hash(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()).encode("utf-8"))[:16]

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_json_string(self) -> str:
        return canonical_json(self.to_dict(), indent=2) + "\n"

    def to_json_file(self, path: Union[str, Path]):
        Path(path).write_text(self.to_json_string())

    @classmethod
    def from_dict(cls, d: Dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise InvalidConfigError(f"{path} is not valid JSON: {e}") from e
        return cls.from_dict(d)

    def replace(self, **changes) -> "ExperimentConfig":
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise InvalidConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return replace(self, **changes)
