"""Experiment orchestration: configs, CSV/manifest emission, CLI and the
acceptance suite."""
