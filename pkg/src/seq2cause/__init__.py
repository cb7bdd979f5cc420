"""Causal discovery on discrete event sequences with autoregressive density estimators."""

__version__ = "0.1.0"
