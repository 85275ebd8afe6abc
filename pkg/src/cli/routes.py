"""
Main command router that includes all subcommand modules
"""

import argparse
import logging
import sys
from typing import Optional, Sequence

from ..core.errors import LegionError
from .accountant import register as register_accountant
from .fl import register as register_fl
from .ledger import register as register_ledger
from .proof import register as register_proof
from .scenario import register as register_scenario

logger = logging.getLogger(__name__)

PROG = "legion"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Federated CTI sharing lab: scenarios, FL comparison, "
        "privacy accounting, ledger and exposure-proof checks",
    )
    commands = parser.add_subparsers(dest="command", metavar="<command>")
    commands.required = True

    # Include all subcommand groups
    register_scenario(commands)
    register_fl(commands)
    register_accountant(commands)
    register_ledger(commands)
    register_proof(commands)
    return parser


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one invocation; 0 success, 1 failure, 2 usage error"""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    try:
        return args.handler(args)
    except (LegionError, ValueError, OSError) as e:
        logger.debug(f"❌ {args.command} failed", exc_info=True)
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 1
