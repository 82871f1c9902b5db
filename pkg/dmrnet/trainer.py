import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import torch
from datasets import Dataset
from torch.optim import SGD
from torch.optim.lr_scheduler import LambdaLR
from torch.utils.data import DataLoader, RandomSampler
from tqdm.auto import tqdm
from transformers import TrainerCallback, TrainerControl, TrainerState
from transformers.utils import logging

from .checkpoint import load_checkpoint, restore_trainer, save_checkpoint
from .config import ExperimentConfig
from .data_collator import DataCollatorForModalityDropout
from .errors import DivergenceError, IncompatibleCheckpointError
from .losses import total_loss
from .metrics import CombinationResultTable, per_combination_eval
from .mining import CombinationStats, HardSet, refresh_schedule, variance_records
from .models.dmr import DMRNet
from .utils import canonical_json

logger = logging.get_logger(__name__)

# keys that may differ between a checkpoint and the configuration resuming from it
RESUMABLE_KEYS = ("num_epochs", "save_every_epochs", "report_to_tensorboard", "num_threads")


def derive_seeds(seed: int, n: int = 2) -> List[int]:
    """Independent 64-bit seeds for the data and noise streams of one run."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def lr_lambda(warmup_epochs: int, milestones: List[int], decay_factor: float):
    """Linear warm-up, then constant with a division by `decay_factor` at each milestone."""
    def factor(epoch: int) -> float:
        f = (epoch + 1) / warmup_epochs if epoch < warmup_epochs else 1.0
        for m in milestones:
            if epoch >= m:
                f /= decay_factor
        return f
    return factor


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    config: Dict[str, Any]
    steps: List[Dict[str, Any]] = field(default_factory=list)
    epochs: List[Dict[str, Any]] = field(default_factory=list)
    results: Optional[Dict[str, float]] = None
    mean_sigma2: Optional[float] = None
    wall_clock_seconds: float = 0.0
    status: str = "running"

    def to_dict(self) -> Dict:
        return asdict(self)

    def save(self, path: Union[str, Path]):
        Path(path).write_text(canonical_json(self.to_dict(), indent=2) + "\n")


class DMRTrainer:
    """
    Sequential, seed-deterministic optimization loop.

    Every step draws one modality dropout mask per sample, runs the training path, combines
    L_TTL + alpha L_DR + beta L_HCR and takes an SGD step with momentum and weight decay.
    Every epoch ends with the per-combination variance record and the refresh of the hard set.

    Args:
        model (DMRNet): the model to train, already in the configured dtype.
        args (ExperimentConfig): the experiment configuration.
        train_dataset (Dataset): training split.
        eval_dataset (Dataset, optional): split scored under every combination at the end of training.
        callbacks (List[TrainerCallback], optional): receive on_train_begin, on_log (every step),
            on_epoch_end (with the `epoch_record`) and on_train_end.
        output_dir (str, optional): where periodic checkpoints are written.
    """

    def __init__(
        self,
        model: DMRNet,
        args: ExperimentConfig,
        train_dataset: Dataset,
        eval_dataset: Optional[Dataset] = None,
        callbacks: Optional[List[TrainerCallback]] = None,
        output_dir: Optional[Union[str, Path]] = None,
    ):
        self.model = model
        self.args = args
        self.train_dataset = train_dataset
        self.eval_dataset = eval_dataset
        self.callbacks = list(callbacks) if callbacks else []
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.dtype = next(model.parameters()).dtype
        data_seed, noise_seed = derive_seeds(args.seed)
        self.data_generator = torch.Generator().manual_seed(data_seed)
        self.noise_generator = torch.Generator().manual_seed(noise_seed)
        self.data_collator = DataCollatorForModalityDropout(
            policy=args.dropout(),
            generator=self.data_generator,
            dtype=self.dtype,
        )
        # batch norm on 1-position maps cannot train on a batch of one
        drop_last = model.config.effective_spatial_size == 1 and len(train_dataset) % args.batch_size == 1
        if drop_last:
            logger.info(f"dropping the last training sample of every epoch ({len(train_dataset)} samples, batch size {args.batch_size})")
        self.train_dataloader = DataLoader(
            train_dataset,
            batch_size=args.batch_size,
            sampler=RandomSampler(train_dataset, generator=self.data_generator),
            collate_fn=self.data_collator,
            drop_last=drop_last,
        )
        self.optimizer = SGD(
            model.parameters(),
            lr=args.learning_rate,
            momentum=args.momentum,
            weight_decay=args.weight_decay,
        )
        self.lr_scheduler = LambdaLR(self.optimizer, lr_lambda(args.lr_warmup_epochs, args.lr_milestones, args.lr_decay_factor))
        self.stats = CombinationStats(model.num_modalities)
        self.hard_set: Optional[HardSet] = None
        self.state = TrainerState()
        self.state.num_train_epochs = args.num_epochs
        self.state.max_steps = args.num_epochs * len(self.train_dataloader)
        self.state.epoch = 0
        self.state.global_step = 0
        self.control = TrainerControl()
        self.record = RunRecord(config_hash=args.config_hash, seed=args.seed, config=args.to_dict())

    def call_event(self, event: str, **kwargs):
        for callback in self.callbacks:
            result = getattr(callback, event)(
                self.args,
                self.state,
                self.control,
                model=self.model,
                optimizer=self.optimizer,
                lr_scheduler=self.lr_scheduler,
                train_dataloader=self.train_dataloader,
                **kwargs,
            )
            if result is not None:
                self.control = result

    def training_step(self, batch: Dict[str, Any], epoch: int) -> Dict[str, Any]:
        self.model.train()
        labels = batch["labels"]
        mask_indices = batch["mask_indices"]
        outputs = self.model.forward_train(
            batch["inputs"],
            batch["masks"],
            generator=self.noise_generator,
            zero_noise=self.args.zero_noise,
        )
        hard_set = self.hard_set if self.args.hcr_active else None
        losses = total_loss(outputs, labels, mask_indices, hard_set, self.args.alpha, self.args.beta, self.model.predict)
        if not torch.isfinite(losses.total):
            logger.error(f"divergence at step {self.state.global_step}")
            raise DivergenceError(self.state.global_step, epoch, losses.to_dict())
        self.optimizer.zero_grad()
        losses.total.backward()
        self.optimizer.step()
        self.stats.update(mask_indices, outputs.log_sigma)
        self.state.global_step += 1
        log = {"step": self.state.global_step, "epoch": epoch}
        log.update({k: v for k, v in losses.to_dict().items() if k not in ("alpha", "beta")})
        log["mean_sigma2"] = (2 * outputs.log_sigma.detach()).exp().mean().item()
        log["hard_set"] = list(self.hard_set.indices) if self.hard_set is not None else None
        log["learning_rate"] = self.optimizer.param_groups[0]["lr"]
        return log

    def end_of_epoch(self, epoch: int) -> Dict[str, Any]:
        snapshot = CombinationStats(self.stats.num_modalities).merge(self.stats)
        variances = snapshot.variances()
        self.hard_set = refresh_schedule(epoch + 1, self.args.hcr_warmup_epochs, self.stats, self.hard_set)
        rows = variance_records(variances, snapshot, self.hard_set, epoch)
        for row in rows:
            row["config_hash"] = self.args.config_hash
        return {
            "epoch": epoch,
            "mean_sigma2": snapshot.mean_variance(),
            "hard_set": self.hard_set.to_dict() if self.hard_set is not None else None,
            "variances": rows,
        }

    def train(self, resume_from_checkpoint: Optional[Union[str, Path]] = None) -> RunRecord:
        start_epoch = 0
        if resume_from_checkpoint is not None:
            start_epoch = self._resume(resume_from_checkpoint)
        start_time = time.time()
        self.call_event("on_train_begin")
        logger.info(f"training {sum(p.numel() for p in self.model.parameters())} parameters for {self.args.num_epochs} epochs ({self.args.mode}, alpha={self.args.alpha}, beta={self.args.beta})")
        try:
            for epoch in tqdm(range(start_epoch, self.args.num_epochs), desc="epochs", initial=start_epoch, total=self.args.num_epochs):
                self.state.epoch = epoch
                for batch in tqdm(self.train_dataloader, desc=f"epoch {epoch}", leave=False):
                    log = self.training_step(batch, epoch)
                    self.state.log_history.append(log)
                    self.record.steps.append(log)
                    self.call_event("on_log", logs=log)
                self.lr_scheduler.step()
                epoch_record = self.end_of_epoch(epoch)
                self.record.epochs.append(epoch_record)
                self.record.mean_sigma2 = epoch_record["mean_sigma2"]
                self.state.epoch = epoch + 1
                self.call_event("on_epoch_end", epoch_record=epoch_record)
                if self.args.save_every_epochs and (epoch + 1) % self.args.save_every_epochs == 0 and self.output_dir is not None:
                    self.save_checkpoint(self.output_dir / f"checkpoint-epoch-{epoch + 1}.zip")
        except DivergenceError:
            self.record.status = "diverged"
            self.record.wall_clock_seconds = time.time() - start_time
            raise
        if self.eval_dataset is not None:
            table = self.evaluate()
            self.record.results = table.as_dict()
        self.record.status = "completed"
        self.record.wall_clock_seconds = time.time() - start_time
        self.call_event("on_train_end")
        return self.record

    def evaluate(self, eval_dataset: Optional[Dataset] = None) -> CombinationResultTable:
        dataset = eval_dataset if eval_dataset is not None else self.eval_dataset
        table = per_combination_eval(self.model, dataset, self.args.metric, config_hash=self.args.config_hash)
        self.results = table
        logger.info(f"\n{table}")
        return table

    def save_checkpoint(self, path: Union[str, Path]):
        return save_checkpoint(path, self)

    def _resume(self, path: Union[str, Path]) -> int:
        checkpoint = load_checkpoint(path)
        saved = {k: v for k, v in checkpoint.config.items() if k not in RESUMABLE_KEYS}
        current = {k: v for k, v in self.args.to_dict().items() if k not in RESUMABLE_KEYS}
        if saved != current:
            differing = sorted(k for k in set(saved) | set(current) if saved.get(k) != current.get(k))
            raise IncompatibleCheckpointError(f"cannot resume from {path}: configuration differs in {differing}")
        restore_trainer(checkpoint, self)
        logger.info(f"resumed from {path} at epoch {self.state.epoch}, step {self.state.global_step}")
        return self.state.epoch
