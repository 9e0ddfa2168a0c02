"""Stochastic xLSTM forecasting with variational state-space training."""

__version__ = "0.1.0"
