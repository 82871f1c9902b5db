"""
Shared plumbing of the command line tools.

Configuration precedence is flag > --config_file > default: the JSON file is installed as parser defaults before parsing.
Exit codes: 0 success, 2 invalid configuration or incompatible checkpoint, 3 divergence, 4 corrupted checkpoint.
"""
import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path
from typing import Callable, List, Optional, Tuple

from transformers import HfArgumentParser
from transformers.utils import logging

from ..config import ExperimentConfig
from ..errors import (
    DivergenceError,
    DMRError,
    IncompatibleCheckpointError,
    IntegrityError,
    InvalidConfigError,
    RejectedInputError,
)

logger = logging.get_logger(__name__)

EXIT_CODES = (
    (DivergenceError, 3),
    (IntegrityError, 4),
    (IncompatibleCheckpointError, 2),
    (RejectedInputError, 2),
)


def exit_code(error: DMRError) -> int:
    for kind, code in EXIT_CODES:
        if isinstance(error, kind):
            return code
    return 1


def read_config_file(path: str) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidConfigError(f"cannot read configuration file {path}: {e}") from e
    if not isinstance(d, dict):
        raise InvalidConfigError(f"{path} must hold a JSON object")
    unknown = set(d) - {f.name for f in fields(ExperimentConfig)}
    if unknown:
        raise InvalidConfigError(f"unknown configuration keys in {path}: {sorted(unknown)}")
    return d


def config_parser(description: str) -> HfArgumentParser:
    parser = HfArgumentParser((ExperimentConfig), description=description)
    parser.add_argument("--config_file", help="JSON file with configuration keys; command line flags take precedence.")
    return parser


def parse_config(parser: HfArgumentParser, argv: Optional[List[str]] = None) -> Tuple[ExperimentConfig, argparse.Namespace]:
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config_file")
    known, _ = pre.parse_known_args(argv)
    if known.config_file:
        parser.set_defaults(**read_config_file(known.config_file))
    try:
        config, args = parser.parse_args_into_dataclasses(args=argv, look_for_args_file=False)
    except InvalidConfigError:
        raise
    except ValueError as e:
        # unused command line arguments
        raise InvalidConfigError(str(e)) from e
    return config, args


def run(main: Callable[[Optional[List[str]]], Optional[int]], argv: Optional[List[str]] = None) -> int:
    """Calls `main` and turns dmrnet errors into exit codes."""
    logging.set_verbosity_info()
    try:
        return main(argv) or 0
    except DMRError as e:
        code = exit_code(e)
        logger.error(f"{type(e).__name__}: {e}")
        return code
