"""Marked temporal dynamics: RNN-TD, baselines, simulation and evaluation."""

__version__ = "0.1.0"
