"""
Exceptions raised across dmrnet. The CLI maps them onto exit codes.
"""
from typing import Dict, Optional


class DMRError(Exception):
    """Base class of all dmrnet errors."""


class RejectedInputError(DMRError, ValueError):
    """An argument violates the precondition of an operation (bad shape, invalid mask, label out of range...)."""


class InvalidConfigError(RejectedInputError):
    """The experiment configuration is invalid."""


class DegenerateChannelError(RejectedInputError):
    """A feature map channel has zero norm and no cosine distance can be computed."""


class InsufficientStatisticsError(DMRError):
    """Fewer combinations were observed than the number of hard combinations to select."""


class UndefinedMetricError(DMRError):
    """The metric is not defined for the given inputs (for example ACER with a single class)."""


class DivergenceError(DMRError):
    """The training loss became non-finite.

    Args:
        step (int): the global optimization step at which the loss diverged.
        epoch (int): the epoch of the offending step.
        losses (Dict[str, float]): the loss breakdown of the offending step.
    """

    def __init__(self, step: int, epoch: int, losses: Optional[Dict[str, float]] = None):
        self.step = step
        self.epoch = epoch
        self.losses = losses or {}
        breakdown = ", ".join(f"{k}={v}" for k, v in self.losses.items())
        super().__init__(f"non-finite loss at step {step} (epoch {epoch}): {breakdown}")


class IncompatibleCheckpointError(DMRError):
    """The checkpoint does not match the requested configuration or architecture."""


class IntegrityError(DMRError):
    """The checkpoint archive is corrupted."""
