from pathlib import Path
from typing import Dict, Union

from transformers.integrations import TensorBoardCallback
from transformers.utils import logging

logger = logging.get_logger(__name__)

LOSS_KEYS = ("l_ttl", "l_dr", "l_hcr", "total")


def rewrite_logs(d: Dict) -> Dict[str, Dict[str, float]]:
    """
    group the loss breakdown into 'losses' so that all components land on the same plot
    """
    new_d = {}
    for k, v in d.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool) or k in ("step", "epoch"):
            continue
        if k in LOSS_KEYS:
            new_d.setdefault("losses/breakdown", {})[k] = v
        elif "sigma" in k:
            new_d.setdefault("variance/sigma2", {})[k] = v
        else:
            new_d.setdefault(f"other_data/{k}", {})[k] = v
    return new_d


class LossTensorBoardCallback(TensorBoardCallback):
    """Writes the per-step loss breakdown and the per-epoch variance of each combination to TensorBoard.

    Args:
        log_dir (str): the TensorBoard log directory of the run.
    """

    def __init__(self, log_dir: Union[str, Path], tb_writer=None):
        super().__init__(tb_writer=tb_writer)
        self.log_dir = str(log_dir)

    def _init_summary_writer(self, args, log_dir=None):
        self.tb_writer = self._SummaryWriter(log_dir=log_dir or self.log_dir)

    def on_train_begin(self, args, state, control, **kwargs):
        if self.tb_writer is None:
            self._init_summary_writer(args)
        self.tb_writer.add_text("config", args.to_json_string())

    def on_log(self, args, state, control, logs=None, **kwargs):
        if self.tb_writer is None:
            self._init_summary_writer(args)
        for main_tag, scalar_dict in rewrite_logs(logs).items():
            self.tb_writer.add_scalars(main_tag, scalar_dict, state.global_step)

    def on_epoch_end(self, args, state, control, epoch_record=None, **kwargs):
        if self.tb_writer is None or epoch_record is None:
            return
        d = {row["bits"]: row["d_j"] for row in epoch_record["variances"]}
        if d:
            self.tb_writer.add_scalars("variance/per_combination", d, epoch_record["epoch"])
        self.tb_writer.flush()

    def on_train_end(self, args, state, control, **kwargs):
        if self.tb_writer:
            self.tb_writer.close()
            self.tb_writer = None
