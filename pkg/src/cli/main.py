#!/usr/bin/env python3
"""
Command-line entry point dispatching to the crowd fusion commands.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from src.crowd_fusion.exceptions import CrowdFusionError, ValidationError
from src.cli import evaluate, experiment, fuse, rank, simulate

logger = logging.getLogger(__name__)

COMMANDS = (simulate, fuse, evaluate, rank, experiment)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='crowdfuse',
        description='Fuse crowd-sourced cell outlines into one segmentation.',
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    for command in COMMANDS:
        command.add_parser(subparsers)
    for sub in subparsers.choices.values():
        sub.add_argument('--verbose', '-v', action='store_true', help='debug logging')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one command.

    Returns:
        0 on success, 1 on invalid input, 2 on any other failure
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
    try:
        return args.handler(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (CrowdFusionError, OSError) as e:
        logger.debug("command %s failed", args.command, exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
