"""Desk-scale laboratory for a two-prover quantum interactive proof protocol."""

__version__ = "0.1.0"
