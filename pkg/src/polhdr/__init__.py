"""Snapshot HDR reconstruction from four-orientation polarization captures."""

__version__ = "0.1.0"
