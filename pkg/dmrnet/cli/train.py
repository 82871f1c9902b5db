import sys

from . import config_parser, parse_config, run
from ..train.train_dmr import train


def main(argv=None):
    parser = config_parser("Trains DMRNet on the synthetic multimodal benchmark.")
    parser.add_argument("--output_dir", help="Run directory; a time-stamped directory under RUNS_DIR by default.")
    parser.add_argument("--resume_from_checkpoint", help="Checkpoint archive of an interrupted run with the same configuration.")
    parser.add_argument("--no_show", action="store_true", help="Do not draw the per-combination variances at every epoch end.")
    config, args = parse_config(parser, argv)
    train(
        config,
        output_dir=args.output_dir,
        resume_from_checkpoint=args.resume_from_checkpoint,
        show=not args.no_show
    )


if __name__ == "__main__":
    sys.exit(run(main))
