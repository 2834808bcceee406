"""Information-concentration channel pruning with Shapley-value attribution."""

__version__ = "0.1.0"
