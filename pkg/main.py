"""
legion-cti-lab command-line entry point
"""

import sys

from src.cli.routes import dispatch
from src.core.config import configure_logging


def main() -> int:
    configure_logging()
    return dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
