"""Decentralized two-sided stable matching: markets, baselines, spatial MARL, metrics."""

__version__ = "0.1.0"
