from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import torch
from torch import nn
from transformers import PretrainedConfig
from transformers.modeling_outputs import ModelOutput
from transformers.utils import logging

from ..combinations import CombinationMask, apply_mask
from ..errors import RejectedInputError

logger = logging.get_logger(__name__)

DISTRIBUTION_LEVELS = ("feature_map", "vector", "attention")


class DMRConfig(PretrainedConfig):
    """Architecture of a decoupled multimodal representation network.

    Args:
        input_dims (List[int]): input dimension of each modality; V = len(input_dims).
        num_channels (int): C, channels of every feature map.
        spatial_size (int): S, spatial positions of every feature map.
        hidden_features (int): width of the hidden layer of each modality encoder.
        distribution_level (str): 'feature_map' estimates mu and log sigma at every position of the fused map,
            'vector' estimates them after global average pooling (S collapses to 1),
            'attention' after additive attention pooling over the positions.
        sample_embedding (bool): train on s = mu + eps * sigma; when False the training path uses mu (vanilla baseline).
        log_sigma_bound (float): log sigma is clamped to [-bound, bound].
        zero_init_sigma_head (bool): start with log sigma = 0 everywhere (sigma = 1).
    """

    model_type = "dmrnet"

    def __init__(
        self,
        input_dims: List[int] = [16, 16, 16],
        num_channels: int = 16,
        spatial_size: int = 8,
        hidden_features: int = 64,
        distribution_level: str = "feature_map",
        sample_embedding: bool = True,
        log_sigma_bound: float = 10.0,
        zero_init_sigma_head: bool = False,
        **kwargs
    ):
        kwargs.setdefault("num_labels", 4)
        super().__init__(**kwargs)
        self.input_dims = list(input_dims)
        self.num_channels = num_channels
        self.spatial_size = spatial_size
        self.hidden_features = hidden_features
        self.distribution_level = distribution_level
        self.sample_embedding = sample_embedding
        self.log_sigma_bound = log_sigma_bound
        self.zero_init_sigma_head = zero_init_sigma_head
        if distribution_level not in DISTRIBUTION_LEVELS:
            raise RejectedInputError(f"distribution_level must be one of {DISTRIBUTION_LEVELS}, got '{distribution_level}'")

    @property
    def num_modalities(self) -> int:
        return len(self.input_dims)

    @property
    def effective_spatial_size(self) -> int:
        """Positions of the maps the distribution heads see."""
        return self.spatial_size if self.distribution_level == "feature_map" else 1


@dataclass
class GaussianEmbedding:
    """N(mu, sigma^2) over a batch of feature maps, both B x C x S."""

    mu: torch.Tensor
    log_sigma: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_sigma.shape:
            raise RejectedInputError(f"mu {tuple(self.mu.shape)} and log_sigma {tuple(self.log_sigma.shape)} differ in shape")

    @property
    def sigma(self) -> torch.Tensor:
        return self.log_sigma.exp()

    @property
    def variance(self) -> torch.Tensor:
        return (2 * self.log_sigma).exp()


@dataclass
class DMROutput(ModelOutput):
    logits: torch.Tensor = None
    mu: torch.Tensor = None
    log_sigma: torch.Tensor = None
    sampled: torch.Tensor = None
    pooled: torch.Tensor = None
    modality_features: Tuple[torch.Tensor] = None

    @property
    def embedding(self) -> GaussianEmbedding:
        return GaussianEmbedding(self.mu, self.log_sigma)


class ModalityEncoder(nn.Module):
    """Two affine layers with a GELU in between, reshaped into a C x S feature map."""

    def __init__(self, in_features: int, hidden_features: int, num_channels: int, spatial_size: int):
        super().__init__()
        self.in_features = in_features
        self.num_channels = num_channels
        self.spatial_size = spatial_size
        self.fc_in = nn.Linear(in_features, hidden_features)
        self.act_fct = nn.GELU()
        self.fc_out = nn.Linear(hidden_features, num_channels * spatial_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.size(-1) != self.in_features:
            raise RejectedInputError(f"modality input has dimension {x.size(-1)}, expected {self.in_features}")
        h = self.act_fct(self.fc_in(x))
        return self.fc_out(h).view(-1, self.num_channels, self.spatial_size)  # B x C x S


class DistributionHead(nn.Module):
    """1x1 convolution followed by batch norm, applied at every position of a feature map."""

    def __init__(self, num_channels: int, zero_init: bool = False):
        super().__init__()
        self.conv = nn.Conv1d(num_channels, num_channels, kernel_size=1)
        self.norm = nn.BatchNorm1d(num_channels)
        if zero_init:
            nn.init.zeros_(self.conv.weight)
            nn.init.zeros_(self.conv.bias)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.norm(self.conv(z))


class AttentionPooling(nn.Module):
    """Additive attention over the positions of a feature map: B x C x S -> B x C x 1."""

    def __init__(self, num_channels: int):
        super().__init__()
        self.proj = nn.Conv1d(num_channels, num_channels, kernel_size=1)
        self.score = nn.Conv1d(num_channels, 1, kernel_size=1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        weights = self.score(torch.tanh(self.proj(z))).softmax(-1)  # B x 1 x S
        return (z * weights).sum(-1, keepdim=True)


class DMRNet(nn.Module):
    """Modality encoders, masked fusion, Gaussian heads over the fused map and a linear classifier.

    The classifier weight W is shared by the task loss and the hard combination regularizer.
    Training uses the sampled embedding s = mu + eps * sigma, inference uses mu.
    Batch norm statistics follow the module mode: per batch in train(), running estimates in eval().
    """

    def __init__(self, config: DMRConfig):
        super().__init__()
        self.config = config
        self.num_modalities = config.num_modalities
        self.num_channels = config.num_channels
        self.spatial_size = config.spatial_size
        self.num_labels = config.num_labels
        self.log_sigma_bound = config.log_sigma_bound
        self.encoders = nn.ModuleList([
            ModalityEncoder(d, config.hidden_features, config.num_channels, config.spatial_size)
            for d in config.input_dims
        ])
        self.fusion = nn.Conv1d(self.num_modalities * self.num_channels, self.num_channels, kernel_size=1)
        self.attention_pool = AttentionPooling(self.num_channels) if config.distribution_level == "attention" else None
        self.mu_head = DistributionHead(self.num_channels)
        self.sigma_head = DistributionHead(self.num_channels, zero_init=config.zero_init_sigma_head)
        self.classifier = nn.Linear(self.num_channels, self.num_labels, bias=False)

    def encode_modality(self, v: int, x: torch.Tensor) -> torch.Tensor:
        return self.encoders[v](x)

    def fuse(self, masked_feats: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(masked_feats) != self.num_modalities:
            raise RejectedInputError(f"{len(masked_feats)} feature maps given to fuse, expected {self.num_modalities}")
        shape = masked_feats[0].shape
        if any(f.shape != shape for f in masked_feats) or shape[1:] != (self.num_channels, self.spatial_size):
            raise RejectedInputError(f"inconsistent feature map shapes: {[tuple(f.shape) for f in masked_feats]}")
        return self.fusion(torch.cat(list(masked_feats), dim=1))  # B x C x S

    def estimate_distribution(self, z: torch.Tensor) -> GaussianEmbedding:
        if self.config.distribution_level == "vector":
            z = z.mean(-1, keepdim=True)  # B x C x 1
        elif self.attention_pool is not None:
            z = self.attention_pool(z)
        mu = self.mu_head(z)
        log_sigma = self.sigma_head(z).clamp(-self.log_sigma_bound, self.log_sigma_bound)
        return GaussianEmbedding(mu, log_sigma)

    @staticmethod
    def reparameterize(g: GaussianEmbedding, eps: torch.Tensor) -> torch.Tensor:
        if eps.shape != g.mu.shape:
            raise RejectedInputError(f"eps {tuple(eps.shape)} does not match the embedding {tuple(g.mu.shape)}")
        return g.mu + eps * g.sigma

    @staticmethod
    def pool_and_flatten(f: torch.Tensor) -> torch.Tensor:
        return f.mean(-1)  # global average pooling over positions: B x C

    def predict(self, v: torch.Tensor) -> torch.Tensor:
        if v.size(-1) != self.num_channels:
            raise RejectedInputError(f"pooled vector of length {v.size(-1)}, classifier expects {self.num_channels}")
        return self.classifier(v)

    def _fused(self, inputs: Sequence[torch.Tensor], mask: Union[CombinationMask, torch.Tensor]):
        if len(inputs) != self.num_modalities:
            raise RejectedInputError(f"{len(inputs)} modality inputs given, expected {self.num_modalities}")
        feats = [self.encode_modality(v, x) for v, x in enumerate(inputs)]
        z = self.fuse(apply_mask(feats, mask))
        return feats, z

    def forward_train(
        self,
        inputs: Sequence[torch.Tensor],
        mask: Union[CombinationMask, torch.Tensor],
        generator: Optional[torch.Generator] = None,
        eps: Optional[torch.Tensor] = None,
        zero_noise: bool = False
    ) -> DMROutput:
        """Training path: logits are computed from the sampled embedding.

        Args:
            inputs (Sequence[torch.Tensor]): one B x d_v tensor per modality.
            mask (CombinationMask or torch.Tensor): the combination(s) seen by the fusion.
            generator (torch.Generator): source of the single eps draw of this call.
            eps (torch.Tensor): explicit standard normal draws, overrides the generator.
            zero_noise (bool): use eps = 0 without consuming randomness.

        Returns:
            (DMROutput): logits, the Gaussian embedding, the sampled map and its pooled vector.
        """
        feats, z = self._fused(inputs, mask)
        g = self.estimate_distribution(z)
        if not self.config.sample_embedding:
            s = g.mu
        else:
            if eps is None:
                if zero_noise:
                    eps = torch.zeros_like(g.mu)
                else:
                    eps = torch.randn(g.mu.shape, generator=generator, dtype=g.mu.dtype, device=g.mu.device)
            s = self.reparameterize(g, eps)
        pooled = self.pool_and_flatten(s)
        logits = self.predict(pooled)
        return DMROutput(
            logits=logits,
            mu=g.mu,
            log_sigma=g.log_sigma,
            sampled=s,
            pooled=pooled,
            modality_features=tuple(feats),
        )

    def forward_infer(self, inputs: Sequence[torch.Tensor], mask: Union[CombinationMask, torch.Tensor]) -> DMROutput:
        """Inference path: logits from mu, no randomness consumed."""
        feats, z = self._fused(inputs, mask)
        g = self.estimate_distribution(z)
        pooled = self.pool_and_flatten(g.mu)
        logits = self.predict(pooled)
        return DMROutput(
            logits=logits,
            mu=g.mu,
            log_sigma=g.log_sigma,
            sampled=g.mu,
            pooled=pooled,
            modality_features=tuple(feats),
        )

    def forward(self, inputs, mask, generator=None, eps=None, zero_noise=False) -> DMROutput:
        if self.training:
            return self.forward_train(inputs, mask, generator=generator, eps=eps, zero_noise=zero_noise)
        return self.forward_infer(inputs, mask)

    def parameter_groups(self) -> List[Tuple[str, List[Tuple[str, nn.Parameter]]]]:
        """Named parameter groups, one per encoder then fusion, attention pooling (if any), mu head, sigma head and classifier."""
        groups = [(f"encoder_{v}", list(enc.named_parameters())) for v, enc in enumerate(self.encoders)]
        groups.append(("fusion", list(self.fusion.named_parameters())))
        if self.attention_pool is not None:
            groups.append(("attention_pool", list(self.attention_pool.named_parameters())))
        groups += [
            ("mu_head", list(self.mu_head.named_parameters())),
            ("sigma_head", list(self.sigma_head.named_parameters())),
            ("classifier", list(self.classifier.named_parameters())),
        ]
        return groups
