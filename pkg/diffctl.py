#!/usr/bin/env python3
"""diffctl entry script; see ``src.cli`` for the subcommands."""
import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
