"""Run every acceptance criterion and print one line per criterion.

Usage: python scripts/run_accept.py [--seed N] [--scale desk|paper] [--out DIR] [--config FILE]
"""

import sys

from imagination.harness.cli import main

if __name__ == "__main__":
    sys.exit(main(["accept", *sys.argv[1:]]))
