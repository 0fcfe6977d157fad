"""Positive stochastic collocation, collocated local volatility and Dupire local volatility."""

__version__ = "0.1.0"
