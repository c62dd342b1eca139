"""Simulation toolkit for microring-resonator reservoir computing and optical equalization."""

__version__ = "0.1.0"
