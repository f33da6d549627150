"""Exact verification and statistical auditing of discretized Pufferfish and differential privacy."""

__version__ = "0.1.0"
