"""
Checkpoint archive.

A ZIP file (deflate, every timestamp 1980-01-01 00:00:00, fixed member order) holding:

    manifest.json          format name and version, config hash, and for every other member its dtype, shape and sha256
    config.json            the experiment configuration, sorted keys
    trainer_state.json     epoch, global step and the current hard set
    params/<name>.npy      one array per model parameter, named as in `named_parameters()`
    buffers/<name>.npy     batch norm running statistics
    optimizer/<name>.momentum_buffer.npy   SGD momentum per parameter
    rng/<name>.npy         uint8 states of the data and noise generators
    stats/<name>.npy       running per-combination variance sums and counts

Arrays are stored in the .npy format and can be read without this package.
"""
import io
import json
import zipfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import torch
from transformers.utils import logging

from .config import ExperimentConfig
from .errors import IncompatibleCheckpointError, IntegrityError, InvalidConfigError, RejectedInputError
from .mining import HardSet
from .models.dmr import DMRNet
from .utils import canonical_json, sha256_hex

logger = logging.get_logger(__name__)

FORMAT_NAME = "dmrnet-checkpoint"
FORMAT_VERSION = 1
ZIP_DATE_TIME = (1980, 1, 1, 0, 0, 0)
ARRAY_GROUPS = ("params", "buffers", "optimizer", "rng", "stats")


def _npy_bytes(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.save(buffer, np.ascontiguousarray(array), allow_pickle=False)
    return buffer.getvalue()


def _json_bytes(obj) -> bytes:
    return (canonical_json(obj, indent=2) + "\n").encode("utf-8")


@dataclass
class Checkpoint:
    config: Dict
    trainer_state: Dict
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    rng: Dict[str, np.ndarray] = field(default_factory=dict)
    stats: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return ExperimentConfig.from_dict(self.config).config_hash

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.config)

    def _members(self) -> List[Tuple[str, bytes, Dict]]:
        members = [
            ("config.json", _json_bytes(self.config), {"dtype": "json", "shape": None}),
            ("trainer_state.json", _json_bytes(self.trainer_state), {"dtype": "json", "shape": None}),
        ]
        for group in ARRAY_GROUPS:
            arrays = getattr(self, group)
            for name in sorted(arrays):
                array = arrays[name]
                members.append((f"{group}/{name}.npy", _npy_bytes(array), {"dtype": array.dtype.str, "shape": list(array.shape)}))
        return members

    def to_bytes(self) -> bytes:
        members = self._members()
        manifest = {
            "format": FORMAT_NAME,
            "format_version": FORMAT_VERSION,
            "config_hash": self.config_hash,
            "members": [dict(name=name, sha256=sha256_hex(data), **meta) for name, data, meta in members],
        }
        buffer = io.BytesIO()
        with zipfile.ZipFile(buffer, "w") as zf:
            for name, data in [("manifest.json", _json_bytes(manifest))] + [(n, d) for n, d, _ in members]:
                info = zipfile.ZipInfo(name, date_time=ZIP_DATE_TIME)
                info.compress_type = zipfile.ZIP_DEFLATED
                info.create_system = 3
                info.external_attr = 0o644 << 16
                zf.writestr(info, data)
        return buffer.getvalue()

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        logger.info(f"checkpoint saved to {path}")
        return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Reads and verifies an archive; any mismatch with its manifest raises IntegrityError."""
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            try:
                manifest = json.loads(zf.read("manifest.json"))
            except KeyError:
                raise IntegrityError(f"{path} has no manifest.json")
            if manifest.get("format") != FORMAT_NAME:
                raise IntegrityError(f"{path} is not a {FORMAT_NAME} archive")
            if manifest.get("format_version") != FORMAT_VERSION:
                raise IncompatibleCheckpointError(f"checkpoint format version {manifest.get('format_version')} is not supported")
            listed = {m["name"] for m in manifest["members"]} | {"manifest.json"}
            extra = set(zf.namelist()) - listed
            if extra:
                raise IntegrityError(f"{path} contains members absent from its manifest: {sorted(extra)}")
            checkpoint = Checkpoint(config={}, trainer_state={})
            for member in manifest["members"]:
                name = member["name"]
                try:
                    data = zf.read(name)
                except KeyError:
                    raise IntegrityError(f"{path} is missing member {name}")
                if sha256_hex(data) != member["sha256"]:
                    raise IntegrityError(f"checksum mismatch for {name} in {path}")
                if member["dtype"] == "json":
                    setattr(checkpoint, name[:-len(".json")], json.loads(data))
                    continue
                group, filename = name.split("/", 1)
                if group not in ARRAY_GROUPS:
                    raise IntegrityError(f"unexpected member {name} in {path}")
                array = np.load(io.BytesIO(data), allow_pickle=False)
                if array.dtype.str != member["dtype"] or list(array.shape) != member["shape"]:
                    raise IntegrityError(f"{name} does not have the dtype and shape declared in the manifest")
                getattr(checkpoint, group)[filename[:-len(".npy")]] = array
    except (zipfile.BadZipFile, zlib.error) as e:
        raise IntegrityError(f"{path} is not a readable archive: {e}") from e
    try:
        config_hash = checkpoint.config_hash
    except InvalidConfigError as e:
        raise IntegrityError(f"{path} holds an invalid configuration: {e}") from e
    if config_hash != manifest["config_hash"]:
        raise IntegrityError(f"config hash of {path} does not match its configuration")
    _check_hard_set(checkpoint, path)
    return checkpoint


def _check_hard_set(checkpoint: Checkpoint, path: Path):
    """A saved hard set holds exactly V distinct indices in [1, 2^V - 1]."""
    saved = checkpoint.trainer_state.get("hard_set")
    if saved is None:
        return
    num_modalities = checkpoint.config["num_modalities"]
    try:
        hard_set = HardSet.from_dict(saved)
    except (RejectedInputError, KeyError, TypeError, ValueError) as e:
        raise IntegrityError(f"{path} holds a malformed hard set: {e}") from e
    if len(hard_set) != num_modalities or max(hard_set.indices) > 2 ** num_modalities - 1:
        raise IntegrityError(f"{path} holds the hard set {list(hard_set.indices)}, expected {num_modalities} indices in [1, {2 ** num_modalities - 1}]")


def checkpoint_from_trainer(trainer) -> Checkpoint:
    model, optimizer = trainer.model, trainer.optimizer
    checkpoint = Checkpoint(
        config=trainer.args.to_dict(),
        trainer_state={
            "epoch": int(trainer.state.epoch),
            "global_step": trainer.state.global_step,
            "hard_set": trainer.hard_set.to_dict() if trainer.hard_set is not None else None,
        },
    )
    for name, p in model.named_parameters():
        checkpoint.params[name] = p.detach().cpu().numpy().copy()
        momentum = optimizer.state.get(p, {}).get("momentum_buffer")
        if momentum is not None:
            checkpoint.optimizer[f"{name}.momentum_buffer"] = momentum.detach().cpu().numpy().copy()
    for name, b in model.named_buffers():
        checkpoint.buffers[name] = b.detach().cpu().numpy().copy()
    checkpoint.rng["data"] = trainer.data_generator.get_state().numpy().copy()
    checkpoint.rng["noise"] = trainer.noise_generator.get_state().numpy().copy()
    for name, t in trainer.stats.state_dict().items():
        checkpoint.stats[name] = t.numpy().copy()
    return checkpoint


def save_checkpoint(path: Union[str, Path], trainer) -> Checkpoint:
    checkpoint = checkpoint_from_trainer(trainer)
    checkpoint.save(path)
    return checkpoint


def restore_model(checkpoint: Checkpoint, model: DMRNet):
    """Copies parameters and buffers into `model`; names and shapes must match exactly."""
    for kind, named, arrays in (
        ("parameter", dict(model.named_parameters()), checkpoint.params),
        ("buffer", dict(model.named_buffers()), checkpoint.buffers),
    ):
        if set(named) != set(arrays):
            missing, unexpected = sorted(set(named) - set(arrays)), sorted(set(arrays) - set(named))
            raise IncompatibleCheckpointError(f"{kind} names differ: missing {missing}, unexpected {unexpected}")
        with torch.no_grad():
            for name, tensor in named.items():
                array = arrays[name]
                if tuple(array.shape) != tuple(tensor.shape):
                    raise IncompatibleCheckpointError(f"{kind} {name} has shape {tuple(array.shape)} in the checkpoint, {tuple(tensor.shape)} in the model")
                tensor.copy_(torch.from_numpy(array))


def load_model(checkpoint: Checkpoint) -> Tuple[DMRNet, ExperimentConfig]:
    config = checkpoint.experiment_config()
    model = DMRNet(config.model_config()).to(config.torch_dtype)
    restore_model(checkpoint, model)
    model.eval()
    return model, config


def restore_trainer(checkpoint: Checkpoint, trainer):
    restore_model(checkpoint, trainer.model)
    for name, p in trainer.model.named_parameters():
        key = f"{name}.momentum_buffer"
        if key in checkpoint.optimizer:
            trainer.optimizer.state[p]["momentum_buffer"] = torch.from_numpy(checkpoint.optimizer[key].copy())
    trainer.data_generator.set_state(torch.from_numpy(checkpoint.rng["data"].copy()))
    trainer.noise_generator.set_state(torch.from_numpy(checkpoint.rng["noise"].copy()))
    trainer.stats.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in checkpoint.stats.items()})
    trainer.hard_set = HardSet.from_dict(checkpoint.trainer_state["hard_set"])
    epoch = checkpoint.trainer_state["epoch"]
    trainer.state.epoch = epoch
    trainer.state.global_step = checkpoint.trainer_state["global_step"]
    for _ in range(epoch):
        trainer.lr_scheduler.step()
