import itertools
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
import torch
from transformers import TrainerCallback, set_seed
from transformers.utils import logging

from ..checkpoint import Checkpoint, load_checkpoint, load_model
from ..config import ExperimentConfig
from ..datasynth import generate_dataset, to_tensors
from ..errors import DivergenceError, DMRError, IncompatibleCheckpointError, RejectedInputError
from ..metrics import CombinationResultTable, DiversityHistogram, channel_diversity, per_combination_eval
from ..mining import CombinationStats, HardSet, estimate_combination_variances, select_hard_set, variance_records
from ..models.dmr import DMRNet
from ..run_log import RunLogCallback, VARIANCE_COLUMNS
from ..show import ShowCombinationVariances
from ..tb_callback import LossTensorBoardCallback
from ..trainer import DMRTrainer, RunRecord
from ..utils import now
from .. import RUNS_DIR

logger = logging.get_logger(__name__)

SWEEP_COLUMNS = ["seed", "status", "mean_sigma2", "average_metric", "config_hash"]


def build_model(config: ExperimentConfig) -> DMRNet:
    set_seed(config.seed, deterministic=True)
    if config.num_threads:
        torch.set_num_threads(config.num_threads)
    return DMRNet(config.model_config()).to(config.torch_dtype)


def default_run_dir(config: ExperimentConfig) -> Path:
    return Path(RUNS_DIR) / f"dmr-{config.mode}-{config.config_hash}-{now()}"


def train(
    config: ExperimentConfig,
    output_dir: Optional[Union[str, Path]] = None,
    resume_from_checkpoint: Optional[Union[str, Path]] = None,
    callbacks: Optional[List[TrainerCallback]] = None,
    show: bool = True
) -> Tuple[Checkpoint, RunRecord]:
    """Trains on the synthetic benchmark described by `config` and writes the run directory.

    Args:
        config (ExperimentConfig): the experiment.
        output_dir (str): run directory; a time-stamped directory under RUNS_DIR by default.
        resume_from_checkpoint (str): checkpoint archive of an interrupted run with the same configuration.
        callbacks (List[TrainerCallback]): added after the run log, TensorBoard and console callbacks.
        show (bool): draw the per-combination variances on the console at every epoch end.

    Returns:
        (Checkpoint, RunRecord): the final checkpoint and the record of the run.
    """
    output_dir = Path(output_dir) if output_dir is not None else default_run_dir(config)
    output_dir.mkdir(parents=True, exist_ok=True)
    config.to_json_file(output_dir / "config.json")
    logger.info(f"run {config.config_hash} in {output_dir}")

    datasets = generate_dataset(config.synthetic_spec())
    model = build_model(config)
    all_callbacks = [RunLogCallback(output_dir)]
    if config.report_to_tensorboard:
        all_callbacks.append(LossTensorBoardCallback(log_dir=output_dir / "tensorboard"))
    if show:
        all_callbacks.append(ShowCombinationVariances())
    all_callbacks += callbacks or []

    trainer = DMRTrainer(
        model=model,
        args=config,
        train_dataset=datasets["train"],
        eval_dataset=datasets["test"],
        callbacks=all_callbacks,
        output_dir=output_dir,
    )
    try:
        record = trainer.train(resume_from_checkpoint=resume_from_checkpoint)
    except DivergenceError as e:
        logger.error(str(e))
        trainer.record.save(output_dir / "run.json")
        raise
    trainer.results.to_csv(output_dir / "results.csv")
    checkpoint = trainer.save_checkpoint(output_dir / "checkpoint.zip")
    record.save(output_dir / "run.json")
    return checkpoint, record


def _load(checkpoint_path: Union[str, Path], config: Optional[ExperimentConfig]) -> Tuple[DMRNet, ExperimentConfig, Checkpoint]:
    checkpoint = load_checkpoint(checkpoint_path)
    if config is not None and config.config_hash != checkpoint.config_hash:
        raise IncompatibleCheckpointError(
            f"checkpoint {checkpoint_path} was trained with config {checkpoint.config_hash}, not {config.config_hash}"
        )
    model, checkpoint_config = load_model(checkpoint)
    return model, checkpoint_config, checkpoint


def evaluate(
    checkpoint_path: Union[str, Path],
    config: Optional[ExperimentConfig] = None,
    metric: Optional[str] = None,
    split: str = "test",
    output_dir: Optional[Union[str, Path]] = None
) -> CombinationResultTable:
    """Scores a checkpoint under every combination on a split of its synthetic benchmark.

    Args:
        checkpoint_path (str): the checkpoint archive.
        config (ExperimentConfig): when given, must have the config hash of the checkpoint.
        metric (str): overrides the metric of the checkpoint configuration.
        split (str): 'train' or 'test'.
        output_dir (str): where results.csv is written.
    """
    model, config, _ = _load(checkpoint_path, config)
    datasets = generate_dataset(config.synthetic_spec())
    if split not in datasets:
        raise RejectedInputError(f"unknown split '{split}', expected one of {list(datasets)}")
    table = per_combination_eval(model, datasets[split], metric or config.metric, config_hash=config.config_hash)
    print(table)
    if output_dir is not None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        table.to_csv(output_dir / "results.csv")
    return table


def mine(
    checkpoint_path: Union[str, Path],
    split: str = "train",
    batch_size: int = 256,
    output_dir: Optional[Union[str, Path]] = None
) -> Tuple[CombinationStats, HardSet]:
    """Statistics of every combination over a full split seen under every combination, and the resulting hard set."""
    model, config, checkpoint = _load(checkpoint_path, None)
    datasets = generate_dataset(config.synthetic_spec())
    inputs, _ = to_tensors(datasets[split], dtype=config.torch_dtype)
    stats = estimate_combination_variances(model, inputs, batch_size=batch_size)
    variances = stats.variances()
    epoch = checkpoint.trainer_state["epoch"]
    hard_set = select_hard_set(variances, config.num_modalities, epoch)
    logger.info(f"hard set over the {split} split: {hard_set.indices}")
    if output_dir is not None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        rows = variance_records(variances, stats, hard_set, epoch)
        for row in rows:
            row["config_hash"] = config.config_hash
        pd.DataFrame.from_records(rows, columns=VARIANCE_COLUMNS).to_csv(output_dir / "mining.csv", index=False)
    return stats, hard_set


def hard_sets_per_epoch(run_dir: Union[str, Path]) -> Dict[int, Tuple[int, ...]]:
    """Hard set selected at the end of every epoch, read back from the variances.csv of a run."""
    table = pd.read_csv(Path(run_dir) / "variances.csv")
    hard = table[table["in_hard_set"]]
    return {int(epoch): tuple(sorted(int(j) for j in group["index"])) for epoch, group in hard.groupby("epoch")}


def diversity(
    checkpoint_path: Union[str, Path],
    pairs: Sequence[Tuple[int, int]],
    bins: int = 20,
    literal: bool = False,
    max_samples: Optional[int] = None,
    split: str = "test",
    output_dir: Optional[Union[str, Path]] = None
) -> Dict[Tuple[int, int], DiversityHistogram]:
    """Channel distance histograms between the encoders of each (m, n) pair; m == n gives the intra-modality histogram."""
    if not pairs:
        raise RejectedInputError("no modality pair given")
    model, config, _ = _load(checkpoint_path, None)
    dataset = generate_dataset(config.synthetic_spec())[split]
    histograms = {}
    for m, n in pairs:
        histograms[(m, n)] = channel_diversity(model, dataset, m, n, bins=bins, literal=literal, max_samples=max_samples)
        logger.info(f"modalities {m},{n}: mean channel distance {histograms[(m, n)].mean:.4f}")
        if output_dir is not None:
            output_dir = Path(output_dir)
            output_dir.mkdir(parents=True, exist_ok=True)
            histograms[(m, n)].to_csv(output_dir / f"diversity_{m}_{n}.csv")
    return histograms


def sweep(
    base_config: ExperimentConfig,
    grid: Dict[str, List],
    output_dir: Optional[Union[str, Path]] = None,
    num_seeds: int = 1
) -> List[RunRecord]:
    """One run per grid point and seed; a failing point is recorded with its status and the sweep goes on.

    Args:
        base_config (ExperimentConfig): values of every key absent from the grid.
        grid (Dict[str, List]): values taken by each swept key; the cartesian product is run.
        output_dir (str): receives one directory per run and sweep.csv.
        num_seeds (int): runs per grid point, with seeds s + r where s is the seed of the grid point
            when the grid sweeps `seed` and base_config.seed otherwise.

    Returns:
        (List[RunRecord]): in grid order, seeds innermost.
    """
    if not grid or any(len(values) == 0 for values in grid.values()):
        raise RejectedInputError("the sweep grid is empty")
    if num_seeds < 1:
        raise RejectedInputError(f"num_seeds must be >= 1, got {num_seeds}")
    output_dir = Path(output_dir) if output_dir is not None else Path(RUNS_DIR) / f"sweep-{now()}"
    output_dir.mkdir(parents=True, exist_ok=True)
    keys = list(grid)
    records, rows = [], []
    for k, values in enumerate(itertools.product(*(grid[key] for key in keys))):
        point = dict(zip(keys, values))
        for r in range(num_seeds):
            seed = point.get("seed", base_config.seed) + r
            try:
                config = base_config.replace(**{**point, "seed": seed})
            except DMRError as e:
                logger.warning(f"invalid grid point {point}: {e}")
                record = RunRecord(config_hash="", seed=seed, config={**base_config.to_dict(), **point}, status="invalid")
            else:
                try:
                    _, record = train(config, output_dir / f"run-{k:03d}-seed-{seed}", show=False)
                except DivergenceError as e:
                    logger.warning(f"grid point {point} diverged: {e}")
                    record = RunRecord(config_hash=config.config_hash, seed=seed, config=config.to_dict(), status="diverged")
                except Exception as e:
                    logger.warning(f"grid point {point} failed: {type(e).__name__}: {e}")
                    record = RunRecord(config_hash=config.config_hash, seed=seed, config=config.to_dict(), status="failed")
            records.append(record)
            rows.append({
                **point,
                "seed": seed,
                "status": record.status,
                "mean_sigma2": record.mean_sigma2,
                "average_metric": record.results["average"] if record.results else None,
                "config_hash": record.config_hash,
            })
    pd.DataFrame.from_records(rows, columns=keys + [c for c in SWEEP_COLUMNS if c not in keys]).to_csv(output_dir / "sweep.csv", index=False)
    logger.info(f"sweep of {len(records)} runs written to {output_dir / 'sweep.csv'}")
    return records
