"""Exciton fine-structure splitting from polarimeter sweeps, with ensemble
statistics, cascade entanglement and microcavity reflectance helpers."""

__version__ = "0.1.0"
