"""
`accountant eps` and `accountant calibrate`
"""

import argparse

from ..services.privacy_accounting import calibrate_sigma, epsilon_for


def eps_command(args: argparse.Namespace) -> int:
    epsilon, order = epsilon_for(args.q, args.sigma, args.steps, args.delta)
    print(f"epsilon={epsilon:.6f} order={order}")
    return 0


def calibrate_command(args: argparse.Namespace) -> int:
    sigma = calibrate_sigma(args.q, args.steps, args.delta, args.eps)
    print(f"sigma={sigma:.3f}")
    return 0


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--q", type=float, required=True, help="Sampling rate")
    parser.add_argument("--steps", type=int, required=True, help="Number of composed steps")
    parser.add_argument("--delta", type=float, required=True, help="Target delta")


def register(commands: argparse._SubParsersAction) -> None:
    parser = commands.add_parser("accountant", help="RDP privacy accounting")
    actions = parser.add_subparsers(dest="action", metavar="<action>")
    actions.required = True

    eps = actions.add_parser("eps", help="Print epsilon=<float> order=<int>")
    eps.add_argument("--sigma", type=float, required=True, help="Noise multiplier")
    _common(eps)
    eps.set_defaults(handler=eps_command)

    calibrate = actions.add_parser("calibrate", help="Print the smallest sigma=<float> meeting --eps")
    calibrate.add_argument("--eps", type=float, required=True, help="Target epsilon")
    _common(calibrate)
    calibrate.set_defaults(handler=calibrate_command)
