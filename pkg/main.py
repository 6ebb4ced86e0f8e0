"""
Main entry point for relay-stability
"""
import sys
from typing import Optional, Sequence

from app import run_cli


def main(argv: Optional[Sequence[str]] = None) -> int:
    return run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
