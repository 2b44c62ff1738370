"""Functional CAPM: intraday beta surfaces from cumulative intraday return curves."""

__version__ = "0.1.0"
