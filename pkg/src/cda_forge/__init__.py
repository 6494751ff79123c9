"""Continuous double auction simulator with a Markov-chain pricing seller."""

__version__ = "0.1.0"
