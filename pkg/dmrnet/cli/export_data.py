import sys

from . import config_parser, parse_config, run
from ..datasynth import generate_dataset, export_dataset


def main(argv=None):
    parser = config_parser("Writes the synthetic benchmark of a configuration to a CSV file.")
    parser.add_argument("path", help="Output file.")
    config, args = parse_config(parser, argv)
    spec = config.synthetic_spec()
    export_dataset(generate_dataset(spec), spec, args.path)


if __name__ == "__main__":
    sys.exit(run(main))
