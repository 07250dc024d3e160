"""Bound calibration sweep over synthetic and LQG model pairs.

Usage: python scripts/run_calibrate.py [--seed N] [--scale desk|paper] [--out DIR] [--config FILE]
"""

import sys

from imagination.harness.cli import main

if __name__ == "__main__":
    sys.exit(main(["calibrate", *sys.argv[1:]]))
