"""
python -m dmrnet <command> [options]
"""
import sys

from .cli import run
from .cli import diversity, evaluate, export_data, gradcheck, mine, sweep, train

COMMANDS = {
    "train": train.main,
    "eval": evaluate.main,
    "diversity": diversity.main,
    "mine": mine.main,
    "sweep": sweep.main,
    "gradcheck": gradcheck.main,
    "export-data": export_data.main,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] not in COMMANDS:
        print(f"usage: python -m dmrnet {{{','.join(COMMANDS)}}} [options]", file=sys.stderr)
        return 0 if argv and argv[0] in ("-h", "--help") else 2
    return run(COMMANDS[argv[0]], argv[1:])


if __name__ == "__main__":
    sys.exit(main())
