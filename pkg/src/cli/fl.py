"""
`fl compare`: paired non-DP / DP federated runs as CSV
"""

import argparse
import sys
from pathlib import Path

from ..services.fl_engine import compare_dp
from ..services.reporting import compare_csv


def compare_command(args: argparse.Namespace) -> int:
    rows = compare_dp(
        clients=args.clients,
        rounds=args.rounds,
        class_sep=args.sep,
        target_epsilon=args.eps,
        delta=args.delta,
        seed=args.seed,
    )
    text = compare_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def register(commands: argparse._SubParsersAction) -> None:
    parser = commands.add_parser("fl", help="Federated learning experiments")
    actions = parser.add_subparsers(dest="action", metavar="<action>")
    actions.required = True

    compare = actions.add_parser(
        "compare", help="CSV of accuracy, f1, recall per (round, setting in {nodp, dp})"
    )
    compare.add_argument("--clients", type=int, default=3, help="Number of clients")
    compare.add_argument("--rounds", type=int, default=3, help="Number of FedAvg rounds")
    compare.add_argument("--sep", type=float, default=6.0, help="Class separation of the synthetic data")
    compare.add_argument("--eps", type=float, default=1.64, help="Target epsilon for the DP setting")
    compare.add_argument("--delta", type=float, default=1e-5, help="Target delta")
    compare.add_argument("--seed", type=int, required=True, help="Master seed")
    compare.add_argument("--out", help="Also write the CSV to this file")
    compare.set_defaults(handler=compare_command)
