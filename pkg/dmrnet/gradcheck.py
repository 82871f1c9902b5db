"""
Finite difference check of the gradients of the total loss.

Every parameter element is perturbed by +h and -h, the central difference of the total loss is compared with the
autograd gradient, and the relative error ||a - n|| / (||a|| + ||n||) is reported per parameter group.
The model stays in train mode: the batch, the combinations, the hard set and eps are fixed so that the loss
is a deterministic function of the parameters.
"""
from dataclasses import dataclass
from typing import Dict, Optional

import torch
from transformers import set_seed
from transformers.utils import logging

from .combinations import indices_to_masks
from .config import ExperimentConfig
from .errors import RejectedInputError
from .losses import total_loss
from .mining import HardSet
from .models.dmr import DMRNet

logger = logging.get_logger(__name__)

MAX_PARAMETERS = 2000


@dataclass
class GradientCheckReport:
    errors: Dict[str, float]
    tolerance: float
    num_parameters: int

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def to_dict(self) -> Dict:
        return {
            "errors": dict(self.errors),
            "tolerance": self.tolerance,
            "num_parameters": self.num_parameters,
            "passed": self.passed,
        }

    def __str__(self):
        lines = [f"{'group':<12} {'rel. error':>12}"]
        for group, e in self.errors.items():
            flag = "" if e < self.tolerance else "  FAILED"
            lines.append(f"{group:<12} {e:>12.3e}{flag}")
        lines.append(f"{self.num_parameters} parameters, tolerance {self.tolerance:.0e}: {'passed' if self.passed else 'FAILED'}")
        return "\n".join(lines)


def tiny_config(**changes) -> ExperimentConfig:
    """Two modalities of dimension 3, C=S=4, three classes, 64-bit: a few hundred parameters."""
    kwargs = dict(
        num_modalities=2,
        input_dims=[3, 3],
        snr=[0.4, 0.1],
        shared_dim=2,
        specific_dim=2,
        hidden_features=4,
        num_channels=4,
        spatial_size=4,
        num_classes=3,
        train_size=12,
        test_size=12,
        dtype="float64",
    )
    kwargs.update(changes)
    return ExperimentConfig(**kwargs)


def relative_error(analytic: torch.Tensor, numerical: torch.Tensor) -> float:
    denominator = max((analytic.norm() + numerical.norm()).item(), 1e-12)
    return (analytic - numerical).norm().item() / denominator


def gradient_check(
    config: Optional[ExperimentConfig] = None,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    batch_size: int = 6,
    corrupt: Optional[str] = None
) -> GradientCheckReport:
    """
    Args:
        config (ExperimentConfig): architecture and loss weights; the tiny configuration by default.
            The model is always built in float64.
        tolerance (float): a group passes when its relative error is below this value.
        step (float): finite difference step h.
        batch_size (int): samples in the fixed batch, at least 2 for batch norm.
        corrupt (str): name of a parameter group whose analytic gradient is negated before the comparison.

    Returns:
        (GradientCheckReport): the relative error of every parameter group.
    """
    config = config if config is not None else tiny_config()
    if batch_size < 2:
        raise RejectedInputError(f"batch norm needs at least 2 samples, got batch_size={batch_size}")
    set_seed(config.seed)
    model = DMRNet(config.model_config()).to(torch.float64)
    num_parameters = sum(p.numel() for p in model.parameters())
    if num_parameters > MAX_PARAMETERS:
        raise RejectedInputError(f"gradient check is limited to {MAX_PARAMETERS} parameters, the model has {num_parameters}")
    groups = model.parameter_groups()
    if corrupt is not None and corrupt not in dict(groups):
        raise RejectedInputError(f"unknown parameter group '{corrupt}', expected one of {[g for g, _ in groups]}")
    model.train()

    V = config.num_modalities
    g = torch.Generator().manual_seed(config.seed)
    inputs = [torch.randn(batch_size, d, generator=g, dtype=torch.float64) for d in config.input_dims]
    labels = torch.arange(batch_size) % config.num_classes
    # cycle through every combination so that hard and non-hard samples are both present
    mask_indices = torch.arange(batch_size) % (2 ** V - 1) + 1
    masks = indices_to_masks(mask_indices, V)
    hard_set = HardSet(tuple(range(1, V + 1))) if config.beta > 0 else None
    with torch.no_grad():
        shape = model.forward_train(inputs, masks, zero_noise=True).mu.shape
    eps = torch.randn(shape, generator=g, dtype=torch.float64)

    def loss() -> torch.Tensor:
        outputs = model.forward_train(inputs, masks, eps=eps)
        return total_loss(outputs, labels, mask_indices, hard_set, config.alpha, config.beta, model.predict).total

    model.zero_grad()
    loss().backward()

    errors = {}
    for group, named in groups:
        analytic, numerical = [], []
        for name, p in named:
            grad = p.grad.detach().clone().view(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=torch.float64)
            if group == corrupt:
                grad = -grad
            estimate = torch.zeros_like(grad)
            flat = p.detach().view(-1)
            with torch.no_grad():
                for i in range(flat.numel()):
                    original = flat[i].item()
                    flat[i] = original + step
                    plus = loss().item()
                    flat[i] = original - step
                    minus = loss().item()
                    flat[i] = original
                    estimate[i] = (plus - minus) / (2 * step)
            analytic.append(grad)
            numerical.append(estimate)
        errors[group] = relative_error(torch.cat(analytic), torch.cat(numerical))
        logger.debug(f"{group}: relative error {errors[group]:.3e}")
    report = GradientCheckReport(errors=errors, tolerance=tolerance, num_parameters=num_parameters)
    logger.info(f"gradient check {'passed' if report.passed else 'failed'} (max relative error {report.max_error:.3e})")
    return report
