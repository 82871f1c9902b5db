import argparse
import sys
from typing import Tuple

from . import run
from ..errors import RejectedInputError
from ..train.train_dmr import diversity


def modality_pair(s: str) -> Tuple[int, int]:
    try:
        m, n = (int(v) for v in s.split(","))
    except ValueError:
        raise RejectedInputError(f"a modality pair is written m,n, got '{s}'")
    return m, n


def main(argv=None):
    parser = argparse.ArgumentParser(description="Histograms of the channel distances between modality encoders.")
    parser.add_argument("checkpoint", help="Checkpoint archive.")
    parser.add_argument("--pairs", nargs="+", default=["0,0", "0,1"], help="Modality pairs m,n; m,m gives the intra-modality histogram.")
    parser.add_argument("--bins", type=int, default=20, help="Histogram bins over [0, 2].")
    parser.add_argument("--literal", action="store_true", help="Normalize the Gram matrix rows instead of the channels.")
    parser.add_argument("--max_samples", type=int, help="Use only the first samples of the split.")
    parser.add_argument("--split", default="test", choices=["train", "test"], help="Split of the synthetic benchmark.")
    parser.add_argument("--output_dir", default=".", help="Where diversity_<m>_<n>.csv files are written.")
    args = parser.parse_args(argv)
    histograms = diversity(
        args.checkpoint,
        [modality_pair(p) for p in args.pairs],
        bins=args.bins,
        literal=args.literal,
        max_samples=args.max_samples,
        split=args.split,
        output_dir=args.output_dir,
    )
    for (m, n), h in histograms.items():
        print(f"{m},{n}: mean distance {h.mean:.4f}")


if __name__ == "__main__":
    sys.exit(run(main))
