"""Budget allocation: oracle comparison, LQG sensitivities and linear check.

Usage: python scripts/run_allocate.py [--seed N] [--scale desk|paper] [--out DIR] [--config FILE]
"""

import sys

from imagination.harness.cli import main

if __name__ == "__main__":
    sys.exit(main(["allocate", *sys.argv[1:]]))
