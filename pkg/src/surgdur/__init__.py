"""Heteroscedastic neural regression for surgery-case durations."""

__version__ = "0.1.0"
