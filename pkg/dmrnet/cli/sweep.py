import sys
import typing
from dataclasses import fields
from typing import Dict, List

from . import config_parser, parse_config, run
from ..config import ExperimentConfig
from ..errors import InvalidConfigError
from ..train.train_dmr import sweep

FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _scalar_type(key: str):
    if key not in FIELD_TYPES:
        raise InvalidConfigError(f"unknown configuration key '{key}' in the sweep grid")
    t = FIELD_TYPES[key]
    if typing.get_origin(t) is typing.Union:
        t = next(a for a in typing.get_args(t) if a is not type(None))
    if t not in (int, float, str, bool):
        raise InvalidConfigError(f"'{key}' cannot be swept from the command line")
    return t


def _cast(t, value: str):
    if t is bool:
        if value.lower() not in ("true", "false"):
            raise InvalidConfigError(f"expected true or false, got '{value}'")
        return value.lower() == "true"
    try:
        return t(value)
    except ValueError as e:
        raise InvalidConfigError(str(e)) from e


def parse_grid(items: List[str]) -> Dict[str, List]:
    """Parses key=v1,v2,... items into a grid with values of the type of each configuration key."""
    grid = {}
    for item in items:
        key, sep, values = item.partition("=")
        if not sep:
            raise InvalidConfigError(f"grid items are written key=v1,v2, got '{item}'")
        t = _scalar_type(key)
        grid[key] = [_cast(t, v) for v in values.split(",") if v != ""]
    return grid


def main(argv=None):
    parser = config_parser("Runs one training per grid point and seed.")
    parser.add_argument("--grid", nargs="*", default=[], help="Swept keys, e.g. alpha=0,1e-4,1e-3,1e-2 beta=0,0.7")
    parser.add_argument("--num_seeds", type=int, default=1, help="Runs per grid point, with consecutive seeds.")
    parser.add_argument("--output_dir", help="Receives one directory per run and sweep.csv.")
    config, args = parse_config(parser, argv)
    records = sweep(config, parse_grid(args.grid), output_dir=args.output_dir, num_seeds=args.num_seeds)
    failed = [r for r in records if r.status != "completed"]
    print(f"{len(records) - len(failed)} completed, {len(failed)} not completed")


if __name__ == "__main__":
    sys.exit(run(main))
