"""Annotation fidelity curves and their minimizers.

Usage: python scripts/run_fidelity.py [--seed N] [--scale desk|paper] [--out DIR] [--config FILE]
"""

import sys

from imagination.harness.cli import main

if __name__ == "__main__":
    sys.exit(main(["fidelity", *sys.argv[1:]]))
