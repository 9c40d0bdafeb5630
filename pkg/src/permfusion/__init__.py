"""Permeability map fusion from well logs, well tests and seismic data."""

__version__ = "0.1.0"
