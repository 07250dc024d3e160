"""REINFORCE unbiasedness, variance inflation and biased-reward MSE.

Usage: python scripts/run_reinforce.py [--seed N] [--scale desk|paper] [--out DIR] [--config FILE]
"""

import sys

from imagination.harness.cli import main

if __name__ == "__main__":
    sys.exit(main(["reinforce", *sys.argv[1:]]))
