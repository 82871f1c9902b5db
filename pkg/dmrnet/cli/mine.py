import argparse
import sys

from . import run
from ..combinations import index_to_mask
from ..train.train_dmr import hard_sets_per_epoch, mine


def main(argv=None):
    parser = argparse.ArgumentParser(description="Variance of every combination and the hard set of a checkpoint.")
    parser.add_argument("checkpoint", help="Checkpoint archive.")
    parser.add_argument("--split", default="train", choices=["train", "test"], help="Split seen under every combination.")
    parser.add_argument("--batch_size", type=int, default=256)
    parser.add_argument("--run_dir", help="Run directory whose variances.csv gives the hard set selected at every epoch.")
    parser.add_argument("--output_dir", help="Where mining.csv is written.")
    args = parser.parse_args(argv)
    stats, hard_set = mine(args.checkpoint, split=args.split, batch_size=args.batch_size, output_dir=args.output_dir)
    for j, d in stats.variances().items():
        print(f"{j:>3} {index_to_mask(j, stats.num_modalities)} {d:.4f}{' *' if j in hard_set else ''}")
    if args.run_dir:
        for epoch, indices in hard_sets_per_epoch(args.run_dir).items():
            print(f"epoch {epoch}: {indices}")


if __name__ == "__main__":
    sys.exit(run(main))
