import sys

from . import config_parser, parse_config, run
from ..gradcheck import gradient_check, tiny_config


def main(argv=None):
    parser = config_parser("Compares autograd gradients of the total loss with central finite differences.")
    parser.set_defaults(**tiny_config().to_dict())
    parser.add_argument("--tolerance", type=float, default=1e-4, help="Maximum relative error of a parameter group.")
    parser.add_argument("--step", type=float, default=1e-5, help="Finite difference step.")
    parser.add_argument("--corrupt", help="Negate the analytic gradient of this parameter group (checks the checker).")
    config, args = parse_config(parser, argv)
    report = gradient_check(config, tolerance=args.tolerance, step=args.step, corrupt=args.corrupt)
    print(report)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(run(main))
