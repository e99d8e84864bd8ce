"""Simulator and verification suite for zero-temperature majority dynamics
and the coupled median process on the infinite 3-regular tree."""

__version__ = "0.1.0"
