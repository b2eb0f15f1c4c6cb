"""Lifeline emergency ad hoc network: protocol library and simulator."""

__version__ = "0.1.0"
