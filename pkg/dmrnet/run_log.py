import json
from pathlib import Path
from typing import Union

import pandas as pd
from transformers import TrainerCallback

VARIANCE_COLUMNS = ["epoch", "index", "bits", "d_j", "count", "in_hard_set", "config_hash"]


class RunLogCallback(TrainerCallback):
    """Appends the loss breakdown of every step to steps.jsonl and the per-combination variances of every epoch to variances.csv.

    Files are truncated when training starts from step 0 and appended to when resuming into the same directory.

    Args:
        output_dir (str): the run directory.
    """

    def __init__(self, output_dir: Union[str, Path]):
        self.output_dir = Path(output_dir)
        self.steps_path = self.output_dir / "steps.jsonl"
        self.variances_path = self.output_dir / "variances.csv"

    def on_train_begin(self, args, state, control, **kwargs):
        self.output_dir.mkdir(parents=True, exist_ok=True)
        if state.global_step == 0 or not self.steps_path.exists():
            self.steps_path.write_text("")
            pd.DataFrame(columns=VARIANCE_COLUMNS).to_csv(self.variances_path, index=False)

    def on_log(self, args, state, control, logs=None, **kwargs):
        record = dict(logs, config_hash=args.config_hash)
        with self.steps_path.open("a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def on_epoch_end(self, args, state, control, epoch_record=None, **kwargs):
        if epoch_record is None or not epoch_record["variances"]:
            return
        rows = pd.DataFrame.from_records(epoch_record["variances"], columns=VARIANCE_COLUMNS)
        rows.to_csv(self.variances_path, mode="a", header=False, index=False)
