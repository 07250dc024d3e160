"""Student scaling sweep and power-law fits for dynamics and reward heads.

Usage: python scripts/run_scale.py [--seed N] [--scale desk|paper] [--out DIR] [--config FILE]
"""

import sys

from imagination.harness.cli import main

if __name__ == "__main__":
    sys.exit(main(["scale", *sys.argv[1:]]))
