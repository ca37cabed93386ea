"""Fairness-aware tree ensembles: discriminative risk, oracle bounds, pruning."""

__version__ = "0.1.0"
