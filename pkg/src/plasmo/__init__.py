"""Plasmonic multilayer absorption: FDTD, transfer matrices and neural surrogates."""

__version__ = "0.1.0"
