"""Compatibility-certified CLF-CBF motion planning toolkit."""

__version__ = "0.1.0"
