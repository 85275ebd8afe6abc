"""
`scenario run`: replay a TOML scenario and write its reports
"""

import argparse
import tomllib
from pathlib import Path
from typing import Union

from ..core.config import get_settings
from ..models.schemas import ScenarioConfig, parse_scenario
from ..services.federation import simulate
from ..services.reporting import summarize, write_scenario


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    with open(path, "rb") as f:
        data = tomllib.load(f)
    return parse_scenario(data)


def run_command(args: argparse.Namespace) -> int:
    config = load_scenario(args.file)
    config = config.model_copy(update={"seed": args.seed})
    report, trace = simulate(config)
    out_dir = Path(args.out or get_settings().output_dir)
    write_scenario(report, trace, out_dir)
    for line in summarize(report):
        print(line)
    if not report.ledger_chain_ok or not report.segmentation_ok:
        return 1
    return 0


def register(commands: argparse._SubParsersAction) -> None:
    parser = commands.add_parser("scenario", help="Federation scenario runs")
    actions = parser.add_subparsers(dest="action", metavar="<action>")
    actions.required = True

    run = actions.add_parser(
        "run", help="Run a scenario file and write its reports (JSON, CSV, public feed)"
    )
    run.add_argument("file", help="Scenario configuration (TOML)")
    run.add_argument("--seed", type=int, required=True, help="Master seed, overrides the file")
    run.add_argument("--out", help="Output directory (default: LEGION_OUTPUT_DIR or reports)")
    run.set_defaults(handler=run_command)
