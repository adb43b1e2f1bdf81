"""Bayesian estimation of two-state Markov switching count and outcome models."""

__version__ = "0.1.0"
