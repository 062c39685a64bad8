"""Numerical laboratory for nonconstant bounded steady states of nonlocal
bistable equations posed outside compact obstacles."""

__version__ = "0.1.0"
