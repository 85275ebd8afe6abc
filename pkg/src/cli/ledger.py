"""
`ledger verify`: check an on-disk ledger file
"""

import argparse
import sys

from ..services.ledger import Ledger


def verify_command(args: argparse.Namespace) -> int:
    ledger = Ledger.load(args.file)
    if not ledger.verify_chain():
        print(f"chain broken, {len(ledger)} entries", file=sys.stderr)
        return 1
    print(f"chain ok, {len(ledger)} entries")
    if args.root:
        print(f"root={ledger.head_root().hex()}")
    return 0


def register(commands: argparse._SubParsersAction) -> None:
    parser = commands.add_parser("ledger", help="Append-only ledger tools")
    actions = parser.add_subparsers(dest="action", metavar="<action>")
    actions.required = True

    verify = actions.add_parser("verify", help="Verify the hash chain of a ledger file")
    verify.add_argument("file", help="Ledger file (length-prefixed binary entries)")
    verify.add_argument("--root", action="store_true", help="Also print the Merkle root")
    verify.set_defaults(handler=verify_command)
