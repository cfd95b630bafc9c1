"""Simulation toolkit for amplified phase error metrology on anharmonic qudits."""

__version__ = "0.1.0"
