"""Finite-volume checks of gap stability for frustration-free lattice Hamiltonians."""
__version__ = "0.1.0"
