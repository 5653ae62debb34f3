"""Nested, multilevel and regression Monte-Carlo estimators for future SCR."""

__version__ = "0.1.0"
