"""Distributed MPC constraint management on top of an NRF-based first control layer."""

__version__ = "0.1.0"
