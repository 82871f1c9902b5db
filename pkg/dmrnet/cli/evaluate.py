import argparse
import sys

from . import run
from ..config import ExperimentConfig
from ..metrics import METRIC_KINDS
from ..train.train_dmr import evaluate


def main(argv=None):
    parser = argparse.ArgumentParser(description="Scores a checkpoint under every modality combination.")
    parser.add_argument("checkpoint", help="Checkpoint archive.")
    parser.add_argument("--config_file", help="When given, the checkpoint must have been trained with this configuration.")
    parser.add_argument("--metric", choices=list(METRIC_KINDS), help="Overrides the metric of the checkpoint configuration.")
    parser.add_argument("--split", default="test", choices=["train", "test"], help="Split of the synthetic benchmark.")
    parser.add_argument("--output_dir", help="Where results.csv is written.")
    args = parser.parse_args(argv)
    config = ExperimentConfig.from_json_file(args.config_file) if args.config_file else None
    evaluate(args.checkpoint, config=config, metric=args.metric, split=args.split, output_dir=args.output_dir)


if __name__ == "__main__":
    sys.exit(run(main))
