"""Markov-potential-game MARL toolkit for highway forced merges."""

__version__ = "0.1.0"
